/**
 * Scorer backend over a fixture directory: table MLM fluency, bag
 * matcher, lexicon/template control, hash embeddings. This is the
 * hermetic backend; real pretrained models implement the same surface
 * behind a ServerConfig that names them.
 */

import { readFileSync, existsSync } from "node:fs";
import { join } from "node:path";
import { BagMatcher, parseBagMatcher } from "./backends/bagMatcher";
import {
  parseLexicon,
  parseTagTable,
  PosTemplate,
  SentimentLexicon,
  WordTagger,
} from "./backends/control";
import { HashEmbedder } from "./backends/embedder";
import { parseTableMlm, TableMlm } from "./backends/tableMlm";
import { Vocab } from "./backends/vocab";

export const PROTOCOL_VERSION = 1;

export interface Manifest {
  vocabSize: number;
  maskId: number;
  padId: number | null;
  ops: string[];
  controlTasks: string[];
  modelTags: string[];
  embedDim: number;
}

export class UnsupportedTaskError extends Error {}

export class FixtureBackend {
  readonly mlm: TableMlm;
  readonly bag: BagMatcher;
  readonly lexicon: SentimentLexicon | null;
  readonly tagger: WordTagger | null;
  readonly embedder: HashEmbedder;
  private readonly templates = new Map<string, PosTemplate>();

  constructor(fixtureDir: string, embedDim = 16) {
    this.mlm = parseTableMlm(
      readFileSync(join(fixtureDir, "mlm.txt"), "utf8"),
      join(fixtureDir, "mlm.txt")
    );
    this.bag = parseBagMatcher(
      readFileSync(join(fixtureDir, "bag.txt"), "utf8"),
      this.mlm.vocab,
      join(fixtureDir, "bag.txt")
    );
    const lexiconPath = join(fixtureDir, "lexicon.tsv");
    this.lexicon = existsSync(lexiconPath)
      ? parseLexicon(readFileSync(lexiconPath, "utf8"), lexiconPath)
      : null;
    const tagsPath = join(fixtureDir, "tags.txt");
    this.tagger = existsSync(tagsPath)
      ? parseTagTable(readFileSync(tagsPath, "utf8"), tagsPath)
      : null;
    this.embedder = new HashEmbedder(embedDim);
  }

  get vocab(): Vocab {
    return this.mlm.vocab;
  }

  manifest(): Manifest {
    const ops = ["handshake", "register_image", "mlm_topk", "match", "embed", "encode"];
    const controlTasks: string[] = [];
    if (this.lexicon) controlTasks.push("style:positive", "style:negative");
    if (this.tagger) controlTasks.push("pos");
    if (controlTasks.length > 0) ops.push("control");
    return {
      vocabSize: this.vocab.size,
      maskId: this.vocab.maskId,
      padId: this.vocab.padId,
      ops: ops.sort(),
      controlTasks: controlTasks.sort(),
      modelTags: [
        `table-mlm:${this.mlm.fingerprint()}`,
        `bag-matcher:${this.bag.fingerprint()}`,
      ],
      embedDim: this.embedder.dim,
    };
  }

  mlmTopk(
    tokens: number[],
    maskPos: number,
    k: number,
    mustInclude: number[] = []
  ): Array<[number, number]> {
    return this.mlm.topk(tokens, maskPos, k, mustInclude);
  }

  matchScores(tokenRows: number[][]): number[] {
    return this.bag.scores(tokenRows);
  }

  controlScores(task: string, texts: string[]): number[] {
    if (task === "style:positive" || task === "style:negative") {
      if (!this.lexicon) {
        throw new UnsupportedTaskError("no sentiment lexicon loaded");
      }
      return this.lexicon.scoreTexts(
        texts,
        task === "style:positive" ? "positive" : "negative"
      );
    }
    if (task.startsWith("pos:")) {
      if (!this.tagger) {
        throw new UnsupportedTaskError("no tag table loaded");
      }
      let template = this.templates.get(task);
      if (!template) {
        template = new PosTemplate(task.slice(4));
        this.templates.set(task, template);
      }
      return template.scoreTexts(texts, this.tagger);
    }
    throw new UnsupportedTaskError(`cannot score control task ${JSON.stringify(task)}`);
  }

  embed(texts: string[]): number[][] {
    return this.embedder.embed(texts);
  }

  encode(text: string): number[] {
    return this.vocab.encode(text);
  }
}
