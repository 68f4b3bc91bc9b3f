import { join } from "node:path";
import { describe, expect, it } from "vitest";
import { FixtureBackend } from "../src/backend";
import { Session } from "../src/server";

const TOY7 = join(__dirname, "..", "..", "fixtures", "toy7");

const session = () => new Session(new FixtureBackend(TOY7));

function call(s: Session, request: object): any {
  return JSON.parse(s.handleLine(JSON.stringify(request)));
}

const HANDSHAKE = { op: "handshake", id: 0, min_protocol: 1, max_protocol: 1 };

describe("robustness", () => {
  const malformed = [
    "garbage",
    "[1,2,3]",
    '{"op":"mlm_topk"}',
    '{"op":"warp","id":1}',
    '{"op":"mlm_topk","id":1,"tokens":"x","mask_pos":0,"k":1}',
    '{"op":"mlm_topk","id":1,"tokens":[0],"mask_pos":99,"k":1}',
    '{"op":"mlm_topk","id":1,"tokens":[0],"mask_pos":0,"k":0}',
    '{"op":"match","id":1,"handle":"img-x","token_rows":[],"texts":[]}',
    '{"op":"control","id":1,"task":"style:spicy","token_rows":[],"texts":[]}',
    '{"op":"register_image","id":1}',
    '{"op":"register_image","id":1,"bytes_b64":"!!!"}',
    '{"op":"encode","id":1,"text":"a zebra"}',
  ];

  it.each(malformed)("answers %s with an error reply instead of crashing", (line) => {
    const reply = JSON.parse(session().handleLine(line));
    expect(reply.ok).toBe(false);
    expect(typeof reply.error.code).toBe("string");
  });

  it("echoes the request id in error replies when it is an integer", () => {
    const reply = call(session(), { op: "warp", id: 42 });
    expect(reply.id).toBe(42);
    expect(reply.error.code).toBe("unsupported_op");
  });
});

describe("handshake", () => {
  it("negotiates the protocol version", () => {
    const reply = call(session(), HANDSHAKE);
    expect(reply.ok).toBe(true);
    expect(reply.protocol).toBe(1);
    expect(reply.surface).toHaveLength(reply.vocab_size);
  });

  it("refuses versions outside the client range", () => {
    const reply = call(session(), {
      op: "handshake",
      id: 0,
      min_protocol: 99,
      max_protocol: 100,
    });
    expect(reply.ok).toBe(false);
    expect(reply.error.code).toBe("version_mismatch");
  });
});

describe("image registry", () => {
  it("content-addresses handles and rejects unknown ones", () => {
    const s = session();
    const a = call(s, { op: "register_image", id: 1, bytes_b64: "aGVsbG8=" });
    const b = call(s, { op: "register_image", id: 2, bytes_b64: "aGVsbG8=" });
    const c = call(s, { op: "register_image", id: 3, bytes_b64: "d29ybGQ=" });
    expect(a.handle).toBe(b.handle);
    expect(c.handle).not.toBe(a.handle);
    const stale = call(s, {
      op: "match",
      id: 4,
      handle: "img-nope",
      token_rows: [[1]],
      texts: ["a"],
    });
    expect(stale.error.code).toBe("stale_handle");
  });

  it("computes per-image state exactly once however many texts it scores", () => {
    const s = session();
    const reg = call(s, { op: "register_image", id: 1, bytes_b64: "aGVsbG8=" });
    call(s, { op: "register_image", id: 2, bytes_b64: "aGVsbG8=" });
    expect(s.imageComputations).toBe(1);
    for (let i = 0; i < 25; i++) {
      const reply = call(s, {
        op: "match",
        id: 3 + i,
        handle: reg.handle,
        token_rows: [[2], [3], [6]],
        texts: ["cat", "dog", "mat"],
      });
      expect(reply.ok).toBe(true);
    }
    expect(s.imageComputations).toBe(1);
  });
});

describe("scoring ops", () => {
  it("serves mlm, match, control, embed and encode", () => {
    const s = session();
    const reg = call(s, { op: "register_image", id: 1, bytes_b64: "aGVsbG8=" });

    const mlm = call(s, { op: "mlm_topk", id: 2, tokens: [6, 0, 6], mask_pos: 1, k: 2 });
    expect(mlm.token_ids).toEqual([1, 2]);
    expect(mlm.probs).toEqual(["0.40000000000000002", "0.20000000000000001"]);

    const match = call(s, {
      op: "match",
      id: 3,
      handle: reg.handle,
      token_rows: [
        [1, 2],
        [1, 3],
      ],
      texts: ["a cat", "a dog"],
    });
    expect(match.scores).toEqual(["1", "0"]);
    expect(match.truncated).toEqual([false, false]);

    const control = call(s, {
      op: "control",
      id: 4,
      task: "style:positive",
      token_rows: [[5]],
      texts: ["runs"],
    });
    expect(control.scores).toEqual(["0.59999999999999998"]);

    const embed = call(s, { op: "embed", id: 5, texts: ["a cat"] });
    expect(embed.dim).toBe(16);
    expect(embed.vectors[0]).toHaveLength(16);

    const encode = call(s, { op: "encode", id: 6, text: "a cat sits" });
    expect(encode.token_ids).toEqual([1, 2, 4]);
  });
});
