"""Table-backed scorer backends and brute-force oracles.

Everything here is deterministic and desk-scale: a conditional-table
masked LM, a bag-of-words matcher, and naive straight-line oracles that
recompute what the engine should have done. The bag matcher ignores word
order entirely; it exists to verify the engine's mechanics, not to model
meaning, and must never be mistaken for a semantic scorer.

Fixture files are plain text (see FORMATS.md) and round-trip through the
save/load functions below.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .control import (
    ControlTask,
    PosTemplateControl,
    SentimentControl,
    SentimentLexicon,
    WordTagger,
)
from .core import (
    BackendManifest,
    CaptionState,
    RunConfig,
    Vocabulary,
)
from .errors import EnumerationBudgetError
from .protocol import PROTOCOL_VERSION, format_float
from .rng import Rng

MAX_TOY_VOCAB = 64

# Context keys are (left, right, position); None stands for the wildcard
# written as '*' in fixture files, -1 for a missing neighbor ('^'/'$').
_CtxKey = tuple[int | None, int | None, int | None]
NO_NEIGHBOR = -1


@dataclass(frozen=True)
class TableMlm:
    """Masked-LM stand-in: conditional vectors keyed by neighbor context.

    Lookup tries context entries from most to least specific (left
    neighbor, then right, then position) and falls back to the unigram
    vector. Every stored vector is a distribution over the vocabulary.
    """

    vocab: Vocabulary
    unigram: tuple[float, ...]
    table: Mapping[_CtxKey, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.vocab.size > MAX_TOY_VOCAB:
            raise ValueError(f"toy vocabulary capped at {MAX_TOY_VOCAB} tokens")
        for name, vec in [("unigram", self.unigram), *self.table.items()]:
            if len(vec) != self.vocab.size:
                raise ValueError(f"vector for {name!r} has wrong length")
            if abs(sum(vec) - 1.0) > 1e-9:
                raise ValueError(f"vector for {name!r} does not sum to 1")

    def distribution(
        self, tokens: Sequence[int], mask_pos: int
    ) -> tuple[float, ...]:
        if not 0 <= mask_pos < len(tokens):
            raise ValueError("mask position outside the sequence")
        left = tokens[mask_pos - 1] if mask_pos > 0 else NO_NEIGHBOR
        right = tokens[mask_pos + 1] if mask_pos + 1 < len(tokens) else NO_NEIGHBOR
        for key in (
            (left, right, mask_pos),
            (left, right, None),
            (left, None, mask_pos),
            (left, None, None),
            (None, right, mask_pos),
            (None, right, None),
            (None, None, mask_pos),
        ):
            if key in self.table:
                return self.table[key]
        return self.unigram


def table_mlm_predict(
    model: TableMlm,
    tokens: Sequence[int],
    mask_pos: int,
    k: int,
    must_include: Sequence[int] = (),
) -> list[tuple[int, float]]:
    """Top-k (token, probability) pairs, descending, ties by token id.

    ``k`` larger than the vocabulary is clamped. ``must_include`` tokens
    missing from the top-k are appended with their true probabilities.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    dist = model.distribution(tokens, mask_pos)
    k = min(k, model.vocab.size)
    order = sorted(range(model.vocab.size), key=lambda t: (-dist[t], t))
    picked = order[:k]
    seen = set(picked)
    for t in must_include:
        if t not in seen:
            picked.append(model.vocab.check_token(t))
            seen.add(t)
    return [(t, dist[t]) for t in picked]


@dataclass(frozen=True)
class BagMatcher:
    """Image stand-in: a weighted multiset of token ids.

    A text scores the summed weight of its multiset intersection with
    the bag — each bag entry can be consumed once per multiplicity.
    Word order is deliberately invisible to this matcher.
    """

    weights: Mapping[int, float]
    multiplicity: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for t, w in self.weights.items():
            if not math.isfinite(w):
                raise ValueError(f"bag weight for token {t} is not finite")
        for t, m in self.multiplicity.items():
            if m < 1:
                raise ValueError(f"bag multiplicity for token {t} must be >= 1")

    def count(self, token: int) -> int:
        if token not in self.weights:
            return 0
        return self.multiplicity.get(token, 1)


def bag_match_score(
    matcher: BagMatcher, token_rows: Sequence[Sequence[int]]
) -> list[float]:
    """Multiset-intersection weight of each token row against the bag."""
    out = []
    for row in token_rows:
        counts = Counter(row)
        score = 0.0
        for token, weight in matcher.weights.items():
            hits = min(counts.get(token, 0), matcher.count(token))
            score += weight * hits
        out.append(score)
    return out


class HashEmbedder:
    """Deterministic unit-norm text embeddings for protocol round trips.

    Vectors are derived from a hash of the text; there is no semantic
    content whatsoever.
    """

    def __init__(self, dim: int = 16):
        if dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        out = []
        for text in texts:
            seed = int.from_bytes(
                hashlib.sha256(text.encode("utf-8")).digest()[:8], "big"
            )
            rng = Rng(seed)
            vec = [rng.random() * 2.0 - 1.0 for _ in range(self.dim)]
            norm = math.sqrt(sum(v * v for v in vec))
            out.append([v / norm for v in vec])
        return out


class SyntheticBackend:
    """In-process ScorerBackend over a TableMlm and a BagMatcher.

    ``control`` is an optional callable scoring candidate texts; without
    one, control queries raise.
    """

    def __init__(
        self,
        mlm: TableMlm,
        bag: BagMatcher,
        control: Callable[[Sequence[str]], list[float]] | None = None,
        control_tasks: Sequence[str] = (),
        model_tags: Sequence[str] = (),
        embed_dim: int = 16,
    ):
        self.mlm = mlm
        self.bag = bag
        self.control = control
        self.control_tasks = tuple(control_tasks)
        self.embedder = HashEmbedder(embed_dim)
        self.model_tags = tuple(model_tags) or (
            f"table-mlm:{table_mlm_fingerprint(mlm)}",
            f"bag-matcher:{bag_matcher_fingerprint(bag)}",
        )

    @property
    def vocab(self) -> Vocabulary:
        return self.mlm.vocab

    def manifest(self) -> BackendManifest:
        ops = ["handshake", "register_image", "mlm_topk", "match", "embed", "encode"]
        if self.control is not None or self.control_tasks:
            ops.append("control")
        return BackendManifest(
            protocol_version=PROTOCOL_VERSION,
            vocab_size=self.vocab.size,
            mask_id=self.vocab.mask_id,
            pad_id=self.vocab.pad_id,
            supported_ops=tuple(ops),
            supported_control_tasks=self.control_tasks,
            model_tags=self.model_tags,
            embed_dim=self.embedder.dim,
        )

    def mlm_topk(
        self,
        tokens: Sequence[int],
        mask_pos: int,
        k: int,
        must_include: Sequence[int] = (),
    ) -> list[tuple[int, float]]:
        return table_mlm_predict(self.mlm, tokens, mask_pos, k, must_include)

    def match_scores(
        self, token_rows: Sequence[Sequence[int]], texts: Sequence[str]
    ) -> list[float]:
        del texts  # the bag scores token rows directly
        return bag_match_score(self.bag, token_rows)

    def control_scores(
        self, token_rows: Sequence[Sequence[int]], texts: Sequence[str]
    ) -> list[float]:
        del token_rows
        if self.control is None:
            raise RuntimeError("this backend has no control scorer configured")
        return self.control(texts)

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        return self.embedder.embed(texts)

    def encode(self, text: str) -> list[int]:
        return self.vocab.encode(text)


def _ctx_key_str(key: _CtxKey) -> str:
    return ",".join("*" if part is None else str(part) for part in key)


def table_mlm_fingerprint(model: TableMlm) -> str:
    """Canonical content hash, reproducible from any protocol implementation."""
    lines = ["unigram " + ",".join(format_float(p) for p in model.unigram)]
    for key in sorted(model.table, key=_ctx_key_str):
        vec = model.table[key]
        lines.append(
            "ctx " + _ctx_key_str(key) + " " + ",".join(format_float(p) for p in vec)
        )
    digest = hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
    return digest[:12]


def bag_matcher_fingerprint(bag: BagMatcher) -> str:
    entries = [
        f"{token}:{format_float(bag.weights[token])}:{bag.count(token)}"
        for token in sorted(bag.weights)
    ]
    return hashlib.sha256(";".join(entries).encode("utf-8")).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Fixture file formats
# ---------------------------------------------------------------------------


def _key_part_str(value: int | None, vocab: Vocabulary) -> str:
    if value is None:
        return "*"
    if value == NO_NEIGHBOR:
        return "^"
    return vocab.surface[value]


def _parse_key_part(text: str, vocab: Vocabulary, where: str) -> int | None:
    if text == "*":
        return None
    if text in ("^", "$"):
        return NO_NEIGHBOR
    try:
        return vocab.surface.index(text)
    except ValueError:
        raise ValueError(f"{where}: unknown token {text!r}") from None


def load_table_mlm(path: str | Path) -> TableMlm:
    """Parse the ``tablemlm v1`` fixture format."""
    path = Path(path)
    vocab_words: list[str] | None = None
    mask_surface: str | None = None
    pad_surface: str | None = None
    unigram: tuple[float, ...] | None = None
    ctx_lines: list[tuple[str, str, str, tuple[float, ...]]] = []
    for lineno, raw in enumerate(path.read_text("utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kind = parts[0]
        where = f"{path}:{lineno}"
        if kind == "vocab":
            vocab_words = parts[1:]
        elif kind == "mask":
            mask_surface = parts[1]
        elif kind == "pad":
            pad_surface = parts[1]
        elif kind == "unigram":
            unigram = tuple(float(x) for x in parts[1:])
        elif kind == "ctx":
            if parts[4] != ":":
                raise ValueError(f"{where}: expected 'ctx LEFT RIGHT POS : p...'")
            ctx_lines.append(
                (parts[1], parts[2], parts[3], tuple(float(x) for x in parts[5:]))
            )
        else:
            raise ValueError(f"{where}: unknown directive {kind!r}")
    if vocab_words is None or mask_surface is None or unigram is None:
        raise ValueError(f"{path}: needs vocab, mask and unigram lines")
    vocab = Vocabulary(
        size=len(vocab_words),
        mask_id=vocab_words.index(mask_surface),
        surface=tuple(vocab_words),
        pad_id=vocab_words.index(pad_surface) if pad_surface else None,
    )
    table: dict[_CtxKey, tuple[float, ...]] = {}
    for left_s, right_s, pos_s, vec in ctx_lines:
        left = _parse_key_part(left_s, vocab, str(path))
        right = _parse_key_part(right_s, vocab, str(path))
        pos = None if pos_s == "*" else int(pos_s)
        key = (left, right, pos)
        if key in table:
            raise ValueError(f"{path}: duplicate ctx entry {left_s} {right_s} {pos_s}")
        table[key] = vec
    return TableMlm(vocab=vocab, unigram=unigram, table=table)


def save_table_mlm(model: TableMlm, path: str | Path) -> None:
    vocab = model.vocab
    lines = ["# tablemlm v1"]
    lines.append("vocab " + " ".join(vocab.surface))
    lines.append("mask " + vocab.surface[vocab.mask_id])
    if vocab.pad_id is not None:
        lines.append("pad " + vocab.surface[vocab.pad_id])
    lines.append("unigram " + " ".join(format_float(p) for p in model.unigram))
    for (left, right, pos), vec in sorted(
        model.table.items(), key=lambda kv: repr(kv[0])
    ):
        lines.append(
            "ctx "
            + " ".join(
                [
                    _key_part_str(left, vocab),
                    _key_part_str(right, vocab),
                    "*" if pos is None else str(pos),
                    ":",
                ]
                + [format_float(p) for p in vec]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def load_bag_matcher(path: str | Path, vocab: Vocabulary) -> BagMatcher:
    """Parse the ``bagmatcher v1`` fixture format against a vocabulary."""
    weights: dict[int, float] = {}
    multiplicity: dict[int, int] = {}
    for lineno, raw in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] != "bag" or len(parts) not in (3, 4):
            raise ValueError(f"{path}:{lineno}: expected 'bag WORD WEIGHT [COUNT]'")
        token = _parse_key_part(parts[1], vocab, f"{path}:{lineno}")
        weights[token] = float(parts[2])
        if len(parts) == 4:
            multiplicity[token] = int(parts[3])
    return BagMatcher(weights=weights, multiplicity=multiplicity)


def save_bag_matcher(bag: BagMatcher, vocab: Vocabulary, path: str | Path) -> None:
    lines = ["# bagmatcher v1"]
    for token in sorted(bag.weights):
        entry = f"bag {vocab.surface[token]} {format_float(bag.weights[token])}"
        if token in bag.multiplicity:
            entry += f" {bag.multiplicity[token]}"
        lines.append(entry)
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def load_backend_dir(
    path: str | Path, task: ControlTask | None = None
) -> SyntheticBackend:
    """Build a SyntheticBackend from a fixture directory.

    Expects ``mlm.txt`` and ``bag.txt``; ``lexicon.tsv`` and ``tags.txt``
    are optional and enable the style / POS control scorers.
    """
    path = Path(path)
    mlm = load_table_mlm(path / "mlm.txt")
    bag = load_bag_matcher(path / "bag.txt", mlm.vocab)
    control = None
    tasks: list[str] = []
    lexicon_path = path / "lexicon.tsv"
    tags_path = path / "tags.txt"
    if lexicon_path.exists():
        tasks += ["style:positive", "style:negative"]
    if tags_path.exists():
        tasks.append("pos")
    if task is not None and task.kind == "style":
        if not lexicon_path.exists():
            raise FileNotFoundError(f"{lexicon_path} needed for a style task")
        control = SentimentControl(SentimentLexicon.load(lexicon_path), task.style_target)
    elif task is not None and task.kind == "pos":
        if not tags_path.exists():
            raise FileNotFoundError(f"{tags_path} needed for a pos task")
        control = PosTemplateControl(task.pos_template, WordTagger.load(tags_path))
    return SyntheticBackend(mlm, bag, control=control, control_tasks=tasks)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def oracle_select(
    state: CaptionState,
    i: int,
    backend: SyntheticBackend,
    config: RunConfig,
) -> int:
    """Naive re-derivation of the token the engine must choose at slot ``i``.

    Deliberately straight-line and independent of the engine internals:
    plain exp/sum softmax, elementwise fusion, linear max scan.
    """
    vocab = backend.vocab
    w = config.weights
    k = min(config.k, vocab.size) if config.clamp_k else config.k

    tokens = list(state.prompt) + list(state.slots)
    mask_abs = len(state.prompt) + i
    tokens[mask_abs] = state.mask_id
    must = ()
    if config.keep_incumbent and state.slots[i] != state.mask_id:
        must = (state.slots[i],)
    pairs = backend.mlm_topk(tokens, mask_abs, k, must_include=must)

    ids = [t for t, _ in pairs]
    p_flu = [p for _, p in pairs]
    if config.renormalize_topk:
        s = sum(p_flu)
        if s > 0:
            p_flu = [p / s for p in p_flu]

    rows = []
    texts = []
    for cid in ids:
        if config.include_prompt_in_match_text:
            row = list(state.prompt) + list(state.slots)
            row[mask_abs] = cid
        else:
            row = list(state.slots)
            row[i] = cid
        rows.append(row)
        texts.append(vocab.detokenize(row))
    raw_match = backend.match_scores(rows, texts)
    exps = [math.exp(s / w.match_temperature) for s in raw_match]
    p_match = [e / sum(exps) for e in exps]

    if w.gamma > 0:
        ctl_rows = []
        ctl_texts = []
        for cid in ids:
            row = list(state.slots)
            row[i] = cid
            ctl_rows.append(row)
            ctl_texts.append(vocab.detokenize(row))
        raw_ctl = backend.control_scores(ctl_rows, ctl_texts)
        cexps = [math.exp(s / w.control_temperature) for s in raw_ctl]
        p_ctl = [e / sum(cexps) for e in cexps]
    else:
        p_ctl = [0.0] * len(ids)

    best = 0
    best_value = None
    for idx in range(len(ids)):
        value = w.alpha * p_flu[idx] + w.beta * p_match[idx] + w.gamma * p_ctl[idx]
        if best_value is None or value > best_value:
            best = idx
            best_value = value
    return ids[best]


def oracle_enumerate(
    n: int,
    backend: SyntheticBackend,
    score_fn: Callable[[tuple[int, ...]], float],
    budget: int = 1_000_000,
) -> list[tuple[tuple[int, ...], float]]:
    """Rank every vocab**n sequence by ``score_fn``, best first.

    Ties are broken by ascending token tuple, making the ranking total
    and deterministic. Refuses instances larger than ``budget``.
    """
    size = backend.vocab.size
    total = size**n
    if total > budget:
        raise EnumerationBudgetError(
            f"{size}**{n} = {total} sequences exceeds budget {budget}"
        )
    ranked = [
        (seq, score_fn(seq)) for seq in itertools.product(range(size), repeat=n)
    ]
    ranked.sort(key=lambda item: (-item[1], item[0]))
    return ranked
