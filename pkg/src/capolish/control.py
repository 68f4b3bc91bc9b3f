"""Control tasks: length, infilling, style, and part-of-speech templates.

Length and infilling need no scorer at all (they only shape the canvas);
style and POS plug a control scorer into the engine's third fusion term.
The lexicon and template scorers here run without any remote model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import RunConfig
from .errors import NothingToEditError

CONTROL_KINDS = ("none", "length", "infill", "style", "pos")


@dataclass(frozen=True)
class InfillSpec:
    """A reference sentence with the subset of positions open for editing."""

    reference_tokens: tuple[int, ...]
    editable_positions: frozenset[int]

    def __post_init__(self) -> None:
        n = len(self.reference_tokens)
        if not self.editable_positions:
            raise NothingToEditError("infill spec has no editable positions")
        for p in self.editable_positions:
            if not 0 <= p < n:
                raise ValueError(f"editable position {p} outside [0, {n})")

    def frozen_flags(self) -> tuple[bool, ...]:
        return tuple(
            i not in self.editable_positions
            for i in range(len(self.reference_tokens))
        )


@dataclass(frozen=True)
class PosTemplate:
    """Per-slot allowed POS tag sets; a slot may accept alternatives."""

    tags: tuple[frozenset[str], ...]

    def __post_init__(self) -> None:
        if not self.tags:
            raise ValueError("template must cover at least one slot")
        for slot in self.tags:
            if not slot:
                raise ValueError("every slot needs at least one allowed tag")

    @property
    def n(self) -> int:
        return len(self.tags)

    @staticmethod
    def parse(text: str) -> "PosTemplate":
        """Parse the template syntax ``DET ADJ/NOUN NOUN ...``.

        Slots are space-separated; a slash lists alternative tags for
        one slot.
        """
        slots = []
        for token in text.split():
            slots.append(frozenset(t for t in token.split("/") if t))
        return PosTemplate(tags=tuple(slots))

    def render(self) -> str:
        return " ".join("/".join(sorted(slot)) for slot in self.tags)


@dataclass(frozen=True)
class SentimentLexicon:
    """Word polarity in [-1, 1]; unknown words score 0."""

    polarity: Mapping[str, float]

    def __post_init__(self) -> None:
        for word, value in self.polarity.items():
            if not -1.0 <= value <= 1.0:
                raise ValueError(f"polarity for {word!r} outside [-1, 1]")

    def score_word(self, word: str) -> float:
        return self.polarity.get(word.lower(), 0.0)

    @staticmethod
    def load(path: str | Path) -> "SentimentLexicon":
        """Read the two-column ``word<TAB>polarity`` lexicon format."""
        table: dict[str, float] = {}
        for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'word<TAB>polarity'")
            table[parts[0].lower()] = float(parts[1])
        return SentimentLexicon(polarity=table)


# A handful of unambiguous words so style tasks run out of the box.
BUILTIN_LEXICON = SentimentLexicon(
    polarity={
        "good": 0.8,
        "great": 0.9,
        "beautiful": 0.9,
        "happy": 0.9,
        "nice": 0.6,
        "lovely": 0.8,
        "bad": -0.8,
        "terrible": -0.9,
        "ugly": -0.8,
        "sad": -0.9,
        "awful": -0.9,
        "horrible": -0.9,
    }
)


@dataclass(frozen=True)
class ControlTask:
    """Which control signal a run optimizes for, plus its payload."""

    kind: str = "none"
    target_length: int | None = None
    infill: InfillSpec | None = None
    style_target: str | None = None  # "positive" | "negative"
    pos_template: PosTemplate | None = None

    def __post_init__(self) -> None:
        if self.kind not in CONTROL_KINDS:
            raise ValueError(f"unknown control kind {self.kind!r}")
        if self.kind == "style" and self.style_target not in ("positive", "negative"):
            raise ValueError("style task needs target 'positive' or 'negative'")
        if self.kind == "pos" and self.pos_template is None:
            raise ValueError("pos task needs a template")
        if self.kind == "infill" and self.infill is None:
            raise ValueError("infill task needs an InfillSpec")

    def tag(self) -> str:
        """Wire tag understood by remote control scorers."""
        if self.kind == "style":
            return f"style:{self.style_target}"
        if self.kind == "pos":
            return f"pos:{self.pos_template.render()}"
        return self.kind


def parse_control_tag(text: str | None) -> ControlTask | None:
    """Parse a control selector: none, style:positive|negative, pos:<template>."""
    if text is None or text == "none":
        return None
    if text in ("style:positive", "style:negative"):
        return ControlTask(kind="style", style_target=text.split(":", 1)[1])
    if text.startswith("pos:"):
        return ControlTask(kind="pos", pos_template=PosTemplate.parse(text[4:]))
    raise ValueError(
        f"unknown control {text!r}; expected none, style:positive, "
        "style:negative or pos:<template>"
    )


def build_length_task(n: int, base: RunConfig) -> RunConfig:
    """Configure a run that targets ``n`` editable slots.

    Length needs no classifier, so the control weight is zeroed. The
    realized word count can still drift by a couple of words when the
    backend's tokenizer splits words into pieces; that is a property of
    the backend, not a guarantee the engine can make.
    """
    if n < 1:
        raise ValueError("target length must be >= 1")
    return replace(
        base,
        n=n,
        weights=replace(base.weights, gamma=0.0),
        control_task=ControlTask(kind="length", target_length=n),
    )


def build_infill_task(spec: InfillSpec, base: RunConfig) -> RunConfig:
    """Configure a run that edits only ``spec.editable_positions``.

    Slots start from the reference tokens, every other position is
    frozen, and the position order is drawn over the editable set only.
    """
    return replace(
        base,
        n=len(spec.reference_tokens),
        weights=replace(base.weights, gamma=0.0),
        control_task=ControlTask(kind="infill", infill=spec),
    )


def sentiment_scores(
    texts: Sequence[Sequence[str]],
    lexicon: SentimentLexicon,
    target: str,
) -> list[float]:
    """Mean signed word polarity per text, negated for a negative target.

    The mean (rather than the sum) keeps caption length from scaling the
    control strength. These raw scores feed the control softmax.
    """
    if len(texts) == 0:
        raise ValueError("sentiment_scores requires at least one text")
    if target not in ("positive", "negative"):
        raise ValueError("target must be 'positive' or 'negative'")
    sign = 1.0 if target == "positive" else -1.0
    out = []
    for words in texts:
        if len(words) == 0:
            out.append(0.0)
            continue
        total = sum(lexicon.score_word(w) for w in words)
        out.append(sign * total / len(words))
    return out


def pos_match_scores(
    tagged_candidates: Sequence[Sequence[str]],
    template: PosTemplate,
    hard: bool = False,
) -> list[float]:
    """Fraction of slots whose tag is allowed at that slot, in [0, 1].

    With ``hard`` set, any violation zeroes the candidate instead of
    costing a fraction.
    """
    out = []
    for tags in tagged_candidates:
        if len(tags) != template.n:
            raise ValueError(
                f"tag sequence length {len(tags)} != template length {template.n}"
            )
        hits = sum(1 for tag, allowed in zip(tags, template.tags) if tag in allowed)
        if hard:
            out.append(1.0 if hits == template.n else 0.0)
        else:
            out.append(hits / template.n)
    return out


class WordTagger:
    """Word-to-tag lookup used by the offline POS control scorer.

    Words missing from the table get the ``X`` tag, which templates can
    allow explicitly but usually will not.
    """

    def __init__(self, table: Mapping[str, str]):
        self.table = {w.lower(): t for w, t in table.items()}

    def tag_words(self, words: Iterable[str]) -> list[str]:
        return [self.table.get(w.lower(), "X") for w in words]

    @staticmethod
    def load(path: str | Path) -> "WordTagger":
        """Read the two-column ``word<TAB>TAG`` tag table format."""
        table: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'word<TAB>TAG'")
            table[parts[0]] = parts[1]
        return WordTagger(table)


class SentimentControl:
    """Control scorer scoring candidate texts against a sentiment target."""

    def __init__(self, lexicon: SentimentLexicon, target: str):
        self.lexicon = lexicon
        self.target = target

    def __call__(self, texts: Sequence[str]) -> list[float]:
        return sentiment_scores([t.split() for t in texts], self.lexicon, self.target)


class PosTemplateControl:
    """Control scorer scoring candidate texts against a POS template.

    Candidates whose word count differs from the template length score
    0 rather than erroring, so prompts and stray pieces cannot crash a
    polishing run.
    """

    def __init__(self, template: PosTemplate, tagger: WordTagger, hard: bool = False):
        self.template = template
        self.tagger = tagger
        self.hard = hard

    def __call__(self, texts: Sequence[str]) -> list[float]:
        out = []
        for text in texts:
            words = text.split()
            if len(words) != self.template.n:
                out.append(0.0)
                continue
            tags = self.tagger.tag_words(words)
            out.append(pos_match_scores([tags], self.template, self.hard)[0])
        return out
