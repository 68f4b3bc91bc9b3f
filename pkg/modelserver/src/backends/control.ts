/**
 * Control scorers dispatched by task tag: sentiment lexicons for
 * `style:positive` / `style:negative`, POS templates for `pos:<template>`.
 * Raw scores only; the client applies its own softmax temperature.
 */

export class SentimentLexicon {
  constructor(readonly polarity: Map<string, number>) {
    for (const [word, value] of polarity) {
      if (value < -1 || value > 1) {
        throw new Error(`polarity for ${JSON.stringify(word)} outside [-1, 1]`);
      }
    }
  }

  scoreWord(word: string): number {
    return this.polarity.get(word.toLowerCase()) ?? 0.0;
  }

  /** Mean signed word polarity per text, negated for a negative target. */
  scoreTexts(texts: string[], target: "positive" | "negative"): number[] {
    const sign = target === "positive" ? 1.0 : -1.0;
    return texts.map((text) => {
      const words = text.split(/\s+/).filter(Boolean);
      if (words.length === 0) return 0.0;
      let total = 0.0;
      for (const w of words) total += this.scoreWord(w);
      return (sign * total) / words.length;
    });
  }
}

export function parseLexicon(content: string, where = "lexicon.tsv"): SentimentLexicon {
  const table = new Map<string, number>();
  content.split("\n").forEach((raw, index) => {
    const line = raw.trim();
    if (!line || line.startsWith("#")) return;
    const parts = line.split("\t");
    if (parts.length !== 2) {
      throw new Error(`${where}:${index + 1}: expected 'word<TAB>polarity'`);
    }
    table.set(parts[0].toLowerCase(), Number(parts[1]));
  });
  return new SentimentLexicon(table);
}

export class WordTagger {
  constructor(readonly table: Map<string, string>) {}

  tagWords(words: string[]): string[] {
    return words.map((w) => this.table.get(w.toLowerCase()) ?? "X");
  }
}

export function parseTagTable(content: string, where = "tags.txt"): WordTagger {
  const table = new Map<string, string>();
  content.split("\n").forEach((raw, index) => {
    const line = raw.trim();
    if (!line || line.startsWith("#")) return;
    const parts = line.split("\t");
    if (parts.length !== 2) {
      throw new Error(`${where}:${index + 1}: expected 'word<TAB>TAG'`);
    }
    table.set(parts[0].toLowerCase(), parts[1]);
  });
  return new WordTagger(table);
}

/** Template syntax `DET ADJ/NOUN NOUN ...`; slash lists alternatives. */
export class PosTemplate {
  readonly tags: Set<string>[];

  constructor(text: string) {
    this.tags = text
      .split(/\s+/)
      .filter(Boolean)
      .map((slot) => new Set(slot.split("/").filter(Boolean)));
    if (this.tags.length === 0) {
      throw new Error("template must cover at least one slot");
    }
  }

  /** Fraction of slots whose tag is allowed; 0 on length mismatch. */
  scoreTexts(texts: string[], tagger: WordTagger): number[] {
    return texts.map((text) => {
      const words = text.split(/\s+/).filter(Boolean);
      if (words.length !== this.tags.length) return 0.0;
      const tags = tagger.tagWords(words);
      let hits = 0;
      tags.forEach((tag, i) => {
        if (this.tags[i].has(tag)) hits += 1;
      });
      return hits / this.tags.length;
    });
  }
}
