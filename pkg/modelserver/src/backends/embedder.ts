/**
 * Deterministic unit-norm hash embeddings, bit-compatible with the
 * Python client's fixture embedder. No semantics; protocol round trips
 * and cosine-metric plumbing only.
 */

import { createHash } from "node:crypto";
import { Rng } from "../rng";

export class HashEmbedder {
  constructor(readonly dim: number = 16) {
    if (dim < 1) throw new Error("embedding dimension must be >= 1");
  }

  embed(texts: string[]): number[][] {
    return texts.map((text) => {
      const digest = createHash("sha256").update(text, "utf8").digest();
      const rng = new Rng(digest.readBigUInt64BE(0));
      const vec: number[] = [];
      for (let i = 0; i < this.dim; i++) vec.push(rng.random() * 2.0 - 1.0);
      let sumSquares = 0.0;
      for (const v of vec) sumSquares += v * v;
      const norm = Math.sqrt(sumSquares);
      return vec.map((v) => v / norm);
    });
  }
}
