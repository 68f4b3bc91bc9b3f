/**
 * Conditional-table masked LM over the `tablemlm v1` fixture format.
 * Context lookup, top-k ordering and the content fingerprint must match
 * the Python implementation exactly (FORMATS.md documents the format).
 */

import { createHash } from "node:crypto";
import { formatFloat17 } from "../float17";
import { Vocab } from "./vocab";

const NO_NEIGHBOR = -1;
const WILDCARD = null;

type KeyPart = number | null;

function keyString(left: KeyPart, right: KeyPart, pos: KeyPart): string {
  const part = (p: KeyPart) => (p === WILDCARD ? "*" : String(p));
  return `${part(left)},${part(right)},${part(pos)}`;
}

export class TableMlm {
  constructor(
    readonly vocab: Vocab,
    readonly unigram: number[],
    readonly table: Map<string, number[]>
  ) {
    const checkVector = (name: string, vec: number[]) => {
      if (vec.length !== vocab.size) {
        throw new Error(`vector for ${name} has wrong length`);
      }
      const sum = vec.reduce((a, b) => a + b, 0);
      if (Math.abs(sum - 1.0) > 1e-9) {
        throw new Error(`vector for ${name} does not sum to 1`);
      }
    };
    checkVector("unigram", unigram);
    for (const [key, vec] of table) checkVector(key, vec);
  }

  distribution(tokens: number[], maskPos: number): number[] {
    if (maskPos < 0 || maskPos >= tokens.length) {
      throw new Error("mask position outside the sequence");
    }
    const left = maskPos > 0 ? tokens[maskPos - 1] : NO_NEIGHBOR;
    const right = maskPos + 1 < tokens.length ? tokens[maskPos + 1] : NO_NEIGHBOR;
    const candidates: [KeyPart, KeyPart, KeyPart][] = [
      [left, right, maskPos],
      [left, right, WILDCARD],
      [left, WILDCARD, maskPos],
      [left, WILDCARD, WILDCARD],
      [WILDCARD, right, maskPos],
      [WILDCARD, right, WILDCARD],
      [WILDCARD, WILDCARD, maskPos],
    ];
    for (const [l, r, p] of candidates) {
      const hit = this.table.get(keyString(l, r, p));
      if (hit !== undefined) return hit;
    }
    return this.unigram;
  }

  /** Top-k pairs, descending probability, ties by token id; k clamps. */
  topk(
    tokens: number[],
    maskPos: number,
    k: number,
    mustInclude: number[] = []
  ): Array<[number, number]> {
    if (k < 1) throw new Error("k must be >= 1");
    const dist = this.distribution(tokens, maskPos);
    const order = [...dist.keys()].sort((a, b) => dist[b] - dist[a] || a - b);
    const picked = order.slice(0, Math.min(k, this.vocab.size));
    const seen = new Set(picked);
    for (const t of mustInclude) {
      if (!seen.has(this.vocab.checkToken(t))) {
        picked.push(t);
        seen.add(t);
      }
    }
    return picked.map((t) => [t, dist[t]]);
  }

  fingerprint(): string {
    const lines = [
      "unigram " + this.unigram.map(formatFloat17).join(","),
    ];
    for (const key of [...this.table.keys()].sort()) {
      lines.push(`ctx ${key} ` + this.table.get(key)!.map(formatFloat17).join(","));
    }
    return createHash("sha256").update(lines.join("\n"), "utf8").digest("hex").slice(0, 12);
  }
}

function parseKeyPart(text: string, vocab: Vocab, where: string): KeyPart {
  if (text === "*") return WILDCARD;
  if (text === "^" || text === "$") return NO_NEIGHBOR;
  const id = vocab.surface.indexOf(text);
  if (id < 0) throw new Error(`${where}: unknown token ${JSON.stringify(text)}`);
  return id;
}

export function parseTableMlm(content: string, where = "mlm.txt"): TableMlm {
  let vocabWords: string[] | null = null;
  let maskSurface: string | null = null;
  let padSurface: string | null = null;
  let unigram: number[] | null = null;
  const ctxLines: [string, string, string, number[]][] = [];
  content.split("\n").forEach((raw, index) => {
    const line = raw.trim();
    if (!line || line.startsWith("#")) return;
    const parts = line.split(/\s+/);
    const here = `${where}:${index + 1}`;
    switch (parts[0]) {
      case "vocab":
        vocabWords = parts.slice(1);
        break;
      case "mask":
        maskSurface = parts[1];
        break;
      case "pad":
        padSurface = parts[1];
        break;
      case "unigram":
        unigram = parts.slice(1).map(Number);
        break;
      case "ctx":
        if (parts[4] !== ":") {
          throw new Error(`${here}: expected 'ctx LEFT RIGHT POS : p...'`);
        }
        ctxLines.push([parts[1], parts[2], parts[3], parts.slice(5).map(Number)]);
        break;
      default:
        throw new Error(`${here}: unknown directive ${JSON.stringify(parts[0])}`);
    }
  });
  if (!vocabWords || maskSurface === null || !unigram) {
    throw new Error(`${where}: needs vocab, mask and unigram lines`);
  }
  const words: string[] = vocabWords;
  const vocab = new Vocab(
    words,
    words.indexOf(maskSurface),
    padSurface !== null ? words.indexOf(padSurface) : null
  );
  const table = new Map<string, number[]>();
  for (const [leftS, rightS, posS, vec] of ctxLines) {
    const key = keyString(
      parseKeyPart(leftS, vocab, where),
      parseKeyPart(rightS, vocab, where),
      posS === "*" ? WILDCARD : Number(posS)
    );
    if (table.has(key)) {
      throw new Error(`${where}: duplicate ctx entry ${leftS} ${rightS} ${posS}`);
    }
    table.set(key, vec);
  }
  return new TableMlm(vocab, unigram, table);
}
