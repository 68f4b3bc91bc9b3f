/** Vocabulary surface table with the shared detokenize/encode rules. */

export class Vocab {
  readonly size: number;
  private readonly lookup: Map<string, number>;

  constructor(
    readonly surface: string[],
    readonly maskId: number,
    readonly padId: number | null = null
  ) {
    this.size = surface.length;
    if (maskId < 0 || maskId >= this.size) {
      throw new Error("mask_id out of range");
    }
    this.lookup = new Map(surface.map((piece, i) => [piece, i]));
  }

  checkToken(id: number): number {
    if (!Number.isInteger(id) || id < 0 || id >= this.size) {
      throw new Error(`token id ${id} out of range [0, ${this.size})`);
    }
    return id;
  }

  /** Pieces starting with "##" attach to the previous piece. */
  detokenize(ids: number[]): string {
    const parts: string[] = [];
    for (const id of ids) {
      const piece = this.surface[this.checkToken(id)];
      if (piece.startsWith("##") && parts.length > 0) {
        parts[parts.length - 1] += piece.slice(2);
      } else {
        parts.push(piece);
      }
    }
    return parts.join(" ");
  }

  /** Whitespace-split word lookup; throws on unknown words. */
  encode(text: string): number[] {
    const ids: number[] = [];
    for (const word of text.split(/\s+/).filter(Boolean)) {
      const id = this.lookup.get(word);
      if (id === undefined) {
        throw new Error(`word ${JSON.stringify(word)} is not in the vocabulary`);
      }
      ids.push(id);
    }
    return ids;
  }
}
