/**
 * Entry point. One session per connection, strict request/reply.
 *
 *   node dist/main.js --fixtures DIR                 # serve on stdio
 *   node dist/main.js --fixtures DIR --port 9090     # serve on TCP
 *   node dist/main.js --fixtures DIR --script reqs.jsonl --record out.jsonl
 *
 * Record mode feeds a script of request lines through a fresh session
 * and writes the `{"dir":">"|"<","data":...}` golden fixture format the
 * client's replay transport consumes.
 */

import { appendFileSync, readFileSync, writeFileSync } from "node:fs";
import { createInterface } from "node:readline";
import { createServer } from "node:net";
import { canonicalJson } from "./canonical";
import { FixtureBackend } from "./backend";
import { Session } from "./server";

interface Args {
  fixtures: string;
  port: number | null;
  script: string | null;
  record: string | null;
}

function parseArgs(argv: string[]): Args {
  const args: Args = { fixtures: "", port: null, script: null, record: null };
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--fixtures":
        args.fixtures = argv[++i];
        break;
      case "--port":
        args.port = Number(argv[++i]);
        break;
      case "--script":
        args.script = argv[++i];
        break;
      case "--record":
        args.record = argv[++i];
        break;
      case "--stdio":
        break;
      default:
        throw new Error(`unknown argument ${argv[i]}`);
    }
  }
  if (!args.fixtures) {
    throw new Error("--fixtures DIR is required");
  }
  return args;
}

function recordFixtures(backend: FixtureBackend, scriptPath: string, outPath: string): void {
  const session = new Session(backend);
  writeFileSync(outPath, "");
  for (const raw of readFileSync(scriptPath, "utf8").split("\n")) {
    const line = raw.trim();
    if (!line) continue;
    const reply = session.handleLine(line);
    appendFileSync(outPath, canonicalJson({ dir: ">", data: line }) + "\n");
    appendFileSync(outPath, canonicalJson({ dir: "<", data: reply.replace(/\n$/, "") }) + "\n");
  }
}

function serveStdio(backend: FixtureBackend): void {
  const session = new Session(backend);
  const rl = createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    if (line.trim()) process.stdout.write(session.handleLine(line));
  });
}

function serveTcp(backend: FixtureBackend, port: number): void {
  const server = createServer((socket) => {
    const session = new Session(backend);
    const rl = createInterface({ input: socket, terminal: false });
    rl.on("line", (line) => {
      if (line.trim()) socket.write(session.handleLine(line));
    });
    socket.on("error", () => socket.destroy());
  });
  server.listen(port, () => {
    process.stderr.write(`listening on tcp port ${port}\n`);
  });
}

function main(): void {
  const args = parseArgs(process.argv.slice(2));
  const backend = new FixtureBackend(args.fixtures);
  if (args.script && args.record) {
    recordFixtures(backend, args.script, args.record);
    return;
  }
  if (args.port !== null) {
    serveTcp(backend, args.port);
    return;
  }
  serveStdio(backend);
}

main();
