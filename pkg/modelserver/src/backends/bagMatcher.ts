/**
 * Weighted-multiset matcher over the `bagmatcher v1` fixture format.
 * Scores the summed bag weight of each candidate row's tokens, each bag
 * entry consumable once per multiplicity. Order-blind by construction;
 * a verification double, not a semantic model.
 */

import { createHash } from "node:crypto";
import { formatFloat17 } from "../float17";
import { Vocab } from "./vocab";

export class BagMatcher {
  constructor(
    readonly weights: Map<number, number>,
    readonly multiplicity: Map<number, number>
  ) {
    for (const [token, weight] of weights) {
      if (!Number.isFinite(weight)) {
        throw new Error(`bag weight for token ${token} is not finite`);
      }
    }
    for (const [token, count] of multiplicity) {
      if (count < 1) {
        throw new Error(`bag multiplicity for token ${token} must be >= 1`);
      }
    }
  }

  count(token: number): number {
    if (!this.weights.has(token)) return 0;
    return this.multiplicity.get(token) ?? 1;
  }

  scores(tokenRows: number[][]): number[] {
    return tokenRows.map((row) => {
      const counts = new Map<number, number>();
      for (const t of row) counts.set(t, (counts.get(t) ?? 0) + 1);
      let score = 0.0;
      for (const [token, weight] of this.weights) {
        const hits = Math.min(counts.get(token) ?? 0, this.count(token));
        score += weight * hits;
      }
      return score;
    });
  }

  fingerprint(): string {
    const entries = [...this.weights.keys()]
      .sort((a, b) => a - b)
      .map((t) => `${t}:${formatFloat17(this.weights.get(t)!)}:${this.count(t)}`);
    return createHash("sha256")
      .update(entries.join(";"), "utf8")
      .digest("hex")
      .slice(0, 12);
  }
}

export function parseBagMatcher(
  content: string,
  vocab: Vocab,
  where = "bag.txt"
): BagMatcher {
  const weights = new Map<number, number>();
  const multiplicity = new Map<number, number>();
  content.split("\n").forEach((raw, index) => {
    const line = raw.trim();
    if (!line || line.startsWith("#")) return;
    const parts = line.split(/\s+/);
    if (parts[0] !== "bag" || parts.length < 3 || parts.length > 4) {
      throw new Error(`${where}:${index + 1}: expected 'bag WORD WEIGHT [COUNT]'`);
    }
    const token = vocab.surface.indexOf(parts[1]);
    if (token < 0) {
      throw new Error(`${where}:${index + 1}: unknown token ${JSON.stringify(parts[1])}`);
    }
    weights.set(token, Number(parts[2]));
    if (parts.length === 4) multiplicity.set(token, Number(parts[3]));
  });
  return new BagMatcher(weights, multiplicity);
}
