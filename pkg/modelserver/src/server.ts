/**
 * One protocol session: line in, line out, never throws. Success replies
 * are byte-compatible with the reference implementation (canonical JSON,
 * float strings), which the golden conformance suite enforces.
 */

import { createHash } from "node:crypto";
import { readFileSync } from "node:fs";
import { canonicalJson, Json } from "./canonical";
import { encodeFloats } from "./float17";
import { FixtureBackend, PROTOCOL_VERSION, UnsupportedTaskError } from "./backend";

type Request = { [key: string]: Json };

class BadRequest extends Error {}

function requireField<T extends Json>(
  obj: Request,
  field: string,
  check: (v: Json) => v is T
): T {
  const value = obj[field];
  if (value === undefined || !check(value)) {
    throw new BadRequest(`missing or invalid field '${field}'`);
  }
  return value;
}

const isInt = (v: Json): v is number =>
  typeof v === "number" && Number.isInteger(v);
const isString = (v: Json): v is string => typeof v === "string";
const isArray = (v: Json): v is Json[] => Array.isArray(v);

function intList(obj: Request, field: string): number[] {
  const value = requireField(obj, field, isArray);
  for (const v of value) {
    if (!isInt(v)) throw new BadRequest(`field '${field}' must be a list of integers`);
  }
  return value as number[];
}

function stringList(obj: Request, field: string): string[] {
  const value = requireField(obj, field, isArray);
  for (const v of value) {
    if (!isString(v)) throw new BadRequest(`field '${field}' must be a list of strings`);
  }
  return value as string[];
}

function intRows(obj: Request, field: string): number[][] {
  const value = requireField(obj, field, isArray);
  return value.map((row) => {
    if (!isArray(row)) throw new BadRequest(`field '${field}' must be a list of rows`);
    for (const v of row) {
      if (!isInt(v)) throw new BadRequest(`field '${field}' rows must hold integers`);
    }
    return row as number[];
  });
}

const BASE64_SHAPE = /^[A-Za-z0-9+/]*={0,2}$/;

export class Session {
  /** Content-addressed image registry; state computed once per handle. */
  private readonly images = new Map<string, Buffer>();
  imageComputations = 0;

  constructor(readonly backend: FixtureBackend) {}

  handleLine(line: string): string {
    let request: Request;
    try {
      const parsed: unknown = JSON.parse(line);
      if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
        throw new BadRequest("wire objects must be JSON objects");
      }
      request = parsed as Request;
    } catch (err) {
      return this.errorLine(null, "bad_request", `request is not valid JSON: ${err}`);
    }
    const id = isInt(request.id) ? request.id : null;
    try {
      return canonicalJson(this.dispatch(request, id)) + "\n";
    } catch (err) {
      if (err instanceof BadRequest) {
        return this.errorLine(id, "bad_request", err.message);
      }
      if (err instanceof UnsupportedTaskError) {
        return this.errorLine(id, "unsupported_task", err.message);
      }
      return this.errorLine(id, "internal", String(err));
    }
  }

  private errorLine(id: number | null, code: string, message: string): string {
    return (
      canonicalJson({ id, ok: false, error: { code, message } }) + "\n"
    );
  }

  private error(id: number | null, code: string, message: string): Json {
    return { id, ok: false, error: { code, message } };
  }

  private dispatch(request: Request, id: number | null): Json {
    if (id === null) {
      return this.error(null, "bad_request", "missing integer 'id'");
    }
    switch (request.op) {
      case "handshake":
        return this.opHandshake(request, id);
      case "register_image":
        return this.opRegisterImage(request, id);
      case "mlm_topk":
        return this.opMlmTopk(request, id);
      case "match":
        return this.opMatch(request, id);
      case "control":
        return this.opControl(request, id);
      case "embed":
        return this.opEmbed(request, id);
      case "encode":
        return this.opEncode(request, id);
      default:
        return this.error(id, "unsupported_op", `unknown op ${JSON.stringify(request.op)}`);
    }
  }

  private opHandshake(request: Request, id: number): Json {
    const low = requireField(request, "min_protocol", isInt);
    const high = requireField(request, "max_protocol", isInt);
    if (low > PROTOCOL_VERSION || high < PROTOCOL_VERSION) {
      return this.error(
        id,
        "version_mismatch",
        `server speaks protocol ${PROTOCOL_VERSION}`
      );
    }
    const m = this.backend.manifest();
    return {
      id,
      ok: true,
      protocol: PROTOCOL_VERSION,
      vocab_size: m.vocabSize,
      mask_id: m.maskId,
      pad_id: m.padId,
      surface: [...this.backend.vocab.surface],
      ops: m.ops,
      control_tasks: m.controlTasks,
      model_tags: m.modelTags,
      embed_dim: m.embedDim,
    };
  }

  private opRegisterImage(request: Request, id: number): Json {
    let content: Buffer;
    if (typeof request.bytes_b64 === "string") {
      const text = request.bytes_b64;
      if (!BASE64_SHAPE.test(text) || text.length % 4 !== 0) {
        return this.error(id, "decode_error", "bad image bytes: invalid base64");
      }
      content = Buffer.from(text, "base64");
    } else if (typeof request.path === "string") {
      try {
        content = readFileSync(request.path);
      } catch {
        return this.error(id, "decode_error", `no such image ${request.path}`);
      }
    } else {
      return this.error(id, "bad_request", "register_image needs 'path' or 'bytes_b64'");
    }
    const handle = "img-" + createHash("sha256").update(content).digest("hex").slice(0, 12);
    if (!this.images.has(handle)) {
      // Stand-in for the one-time per-image embedding a real matcher caches.
      this.imageComputations += 1;
      this.images.set(handle, content);
    }
    return { id, ok: true, handle };
  }

  private opMlmTopk(request: Request, id: number): Json {
    const tokens = intList(request, "tokens");
    const maskPos = requireField(request, "mask_pos", isInt);
    const k = requireField(request, "k", isInt);
    const must = request.must_include === undefined ? [] : intList(request, "must_include");
    let pairs: Array<[number, number]>;
    try {
      pairs = this.backend.mlmTopk(tokens, maskPos, k, must);
    } catch (err) {
      throw new BadRequest(String(err instanceof Error ? err.message : err));
    }
    return {
      id,
      ok: true,
      token_ids: pairs.map(([t]) => t),
      probs: encodeFloats(pairs.map(([, p]) => p)),
    };
  }

  private opMatch(request: Request, id: number): Json {
    const handle = requireField(request, "handle", isString);
    if (!this.images.has(handle)) {
      return this.error(id, "stale_handle", `unknown image handle ${JSON.stringify(handle)}`);
    }
    const rows = intRows(request, "token_rows");
    stringList(request, "texts");
    const scores = this.backend.matchScores(rows);
    return {
      id,
      ok: true,
      scores: encodeFloats(scores),
      truncated: scores.map(() => false),
    };
  }

  private opControl(request: Request, id: number): Json {
    const task = requireField(request, "task", isString);
    intRows(request, "token_rows");
    const texts = stringList(request, "texts");
    const scores = this.backend.controlScores(task, texts);
    return { id, ok: true, scores: encodeFloats(scores) };
  }

  private opEmbed(request: Request, id: number): Json {
    const texts = stringList(request, "texts");
    const vectors = this.backend.embed(texts);
    const dim = vectors.length > 0 ? vectors[0].length : this.backend.embedder.dim;
    return { id, ok: true, dim, vectors: vectors.map(encodeFloats) };
  }

  private opEncode(request: Request, id: number): Json {
    const text = requireField(request, "text", isString);
    try {
      return { id, ok: true, token_ids: this.backend.encode(text) };
    } catch (err) {
      return this.error(id, "encode_error", String(err instanceof Error ? err.message : err));
    }
  }
}
