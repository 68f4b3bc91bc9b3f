"""Desk-scale evaluation measures: Div-n, Vocab, BLEU-n, cosine, summaries.

Words are whitespace-split from detokenized text after lowercasing and
punctuation stripping; reference-based semantic metrics are left to
external suites, which consume the caption files this package emits.
"""

from __future__ import annotations

import math
import string
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def caption_words(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


@dataclass(frozen=True)
class CaptionSet:
    """A group of captions evaluated together, stored as word sequences."""

    captions: tuple[tuple[str, ...], ...]

    @staticmethod
    def from_texts(texts: Iterable[str]) -> "CaptionSet":
        return CaptionSet(tuple(tuple(caption_words(t)) for t in texts))


def _ngrams(words: Sequence[str], n: int) -> Iterable[tuple[str, ...]]:
    return (tuple(words[i : i + n]) for i in range(len(words) - n + 1))


def div_n(caption_set: CaptionSet, n: int, on_short: str = "error") -> float:
    """Distinct n-grams across the set divided by total words across it.

    Captions shorter than ``n`` either raise or, with
    ``on_short="skip"``, are dropped from both counts with a warning.
    """
    if n < 1:
        raise ValueError("gram order must be >= 1")
    if not caption_set.captions:
        raise ValueError("diversity metrics need at least one caption")
    if on_short not in ("error", "skip"):
        raise ValueError("on_short must be 'error' or 'skip'")
    distinct: set[tuple[str, ...]] = set()
    total_words = 0
    for words in caption_set.captions:
        if len(words) < n:
            if on_short == "error":
                raise ValueError(
                    f"caption {' '.join(words)!r} is shorter than n={n}"
                )
            warnings.warn(f"skipping caption shorter than n={n}", stacklevel=2)
            continue
        total_words += len(words)
        distinct.update(_ngrams(words, n))
    if total_words == 0:
        raise ValueError("no caption long enough for the requested gram order")
    return len(distinct) / total_words


def vocab_size(sets: Sequence[CaptionSet]) -> int:
    """Distinct lowercased words across every caption of every set."""
    seen: set[str] = set()
    for cs in sets:
        for words in cs.captions:
            seen.update(words)
    return len(seen)


def bleu_n(
    prediction: str | Sequence[str],
    references: Sequence[str | Sequence[str]],
    max_n: int = 4,
) -> float:
    """Unsmoothed BLEU: modified n-gram precision with brevity penalty.

    Accepts raw strings or pre-split word sequences. Any zero n-gram
    precision zeroes the score, which makes the one-word protocol exact:
    a single predicted word scores 1.0 against the reference word on a
    match and 0.0 otherwise.
    """
    if not references:
        raise ValueError("bleu_n needs at least one reference")
    pred = list(prediction.split() if isinstance(prediction, str) else prediction)
    refs = [list(r.split() if isinstance(r, str) else r) for r in references]
    if not pred:
        return 0.0
    max_n = min(max_n, len(pred))
    log_sum = 0.0
    for n in range(1, max_n + 1):
        pred_counts = Counter(_ngrams(pred, n))
        if not pred_counts:
            return 0.0
        cap: Counter = Counter()
        for ref in refs:
            ref_counts = Counter(_ngrams(ref, n))
            for gram, count in ref_counts.items():
                cap[gram] = max(cap[gram], count)
        clipped = sum(min(c, cap[g]) for g, c in pred_counts.items())
        total = sum(pred_counts.values())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    precision = math.exp(log_sum / max_n)
    closest_ref = min(refs, key=lambda r: (abs(len(r) - len(pred)), len(r)))
    if len(pred) < len(closest_ref):
        brevity = math.exp(1.0 - len(closest_ref) / len(pred))
    else:
        brevity = 1.0
    return brevity * precision


def matcher_score_summary(runs: Sequence) -> dict[str, float]:
    """Mean and population standard deviation of best-snapshot match scores.

    Accepts run results (their best snapshot score is extracted) or raw
    scores.
    """
    if not runs:
        raise ValueError("summary needs at least one run")
    scores = []
    for r in runs:
        if hasattr(r, "per_iteration"):
            scores.append(r.per_iteration[r.best_iteration].sentence_match_score)
        else:
            scores.append(float(r))
    mean = sum(scores) / len(scores)
    var = sum((s - mean) ** 2 for s in scores) / len(scores)
    return {"mean": mean, "stddev": math.sqrt(var), "count": float(len(scores))}


def bsim(vec_a: Sequence[float], vec_b: Sequence[float]) -> float:
    """Cosine similarity between two embedding vectors."""
    if len(vec_a) != len(vec_b):
        raise ValueError("vectors must share a dimension")
    if not vec_a:
        raise ValueError("vectors must be nonempty")
    dot = sum(a * b for a, b in zip(vec_a, vec_b))
    norm_a = math.sqrt(sum(a * a for a in vec_a))
    norm_b = math.sqrt(sum(b * b for b in vec_b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("vectors must have nonzero norm")
    return dot / (norm_a * norm_b)
