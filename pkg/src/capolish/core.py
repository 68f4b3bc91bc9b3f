"""Shared domain types and the pure score-fusion math.

The engine selects each token by fusing three per-candidate probability
vectors: raw masked-LM probabilities (fluency), a softmax over image-text
match scores, and an optional softmax over control-signal scores. This
module owns those types and the arithmetic; it performs no I/O and holds
no mutable state.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Protocol, Sequence, runtime_checkable

from .errors import ConfigIssue, NumericError

if TYPE_CHECKING:
    from .control import ControlTask

# Paper-default hyperparameters for a standard captioning run.
DEFAULT_K = 200
DEFAULT_ITERATIONS = 15
DEFAULT_ALPHA = 0.02
DEFAULT_BETA = 2.0
DEFAULT_GAMMA_CONTROL = 5.0
DEFAULT_LENGTH = 12
DEFAULT_PROMPT = "Image of"


# ---------------------------------------------------------------------------
# Vocabulary and the token canvas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    """Token inventory as reported by a backend handshake.

    ``surface`` maps each token id to its text piece. Pieces beginning
    with ``##`` are treated as continuations and attach to the previous
    piece without a space when detokenizing.
    """

    size: int
    mask_id: int
    surface: tuple[str, ...]
    pad_id: int | None = None

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError("vocabulary size must be >= 1")
        if not 0 <= self.mask_id < self.size:
            raise ValueError("mask_id must be < size")
        if self.pad_id is not None and not 0 <= self.pad_id < self.size:
            raise ValueError("pad_id must be < size")
        if len(self.surface) != self.size:
            raise ValueError("surface table length must equal size")

    def check_token(self, token_id: int) -> int:
        if not 0 <= token_id < self.size:
            raise ValueError(f"token id {token_id} out of range [0, {self.size})")
        return token_id

    def detokenize(self, token_ids: Sequence[int]) -> str:
        parts: list[str] = []
        for tid in token_ids:
            piece = self.surface[self.check_token(tid)]
            if piece.startswith("##") and parts:
                parts[-1] += piece[2:]
            else:
                parts.append(piece)
        return " ".join(parts)

    def encode(self, text: str) -> list[int]:
        """Whitespace-split encoding for word-level vocabularies.

        Backends with subword tokenizers answer ``encode`` requests
        themselves; this is the fallback for table backends whose pieces
        are whole words.
        """
        lookup = {piece: tid for tid, piece in enumerate(self.surface)}
        ids = []
        for word in text.split():
            if word not in lookup:
                raise ValueError(f"word {word!r} is not in the vocabulary")
            ids.append(lookup[word])
        return ids


@dataclass(frozen=True)
class CaptionState:
    """The token canvas: an immutable prompt prefix plus editable slots.

    Frozen slots keep their token through every engine operation; all
    mutators return fresh states.
    """

    prompt: tuple[int, ...]
    slots: tuple[int, ...]
    frozen: tuple[bool, ...]
    mask_id: int

    def __post_init__(self) -> None:
        if len(self.slots) < 1:
            raise ValueError("canvas needs at least one slot")
        if len(self.frozen) != len(self.slots):
            raise ValueError("frozen flags must match slot count")

    @property
    def n(self) -> int:
        return len(self.slots)

    def editable_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.frozen) if not f]

    def with_token(self, i: int, token_id: int) -> "CaptionState":
        if self.frozen[i]:
            raise ValueError(f"slot {i} is frozen")
        slots = list(self.slots)
        slots[i] = token_id
        return replace(self, slots=tuple(slots))

    def full_tokens(self) -> list[int]:
        return list(self.prompt) + list(self.slots)

    @staticmethod
    def fresh(n: int, mask_id: int, prompt: Sequence[int] = ()) -> "CaptionState":
        return CaptionState(
            prompt=tuple(prompt),
            slots=(mask_id,) * n,
            frozen=(False,) * n,
            mask_id=mask_id,
        )


# ---------------------------------------------------------------------------
# Fusion weights and candidate bookkeeping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FusionWeights:
    """Linear mixing coefficients over fluency, match, and control.

    The match and control softmax temperatures divide the backend's raw
    scores; backends document their score scale, and 1.0 is the neutral
    default.
    """

    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    gamma: float = 0.0
    match_temperature: float = 1.0
    control_temperature: float = 1.0


@dataclass(frozen=True)
class CandidateSet:
    """All candidates considered at one position, with their score vectors.

    ``p_fluency`` holds the raw masked-LM probabilities of the candidates
    (not renormalized over the set); ``p_match`` and ``p_control`` are the
    post-softmax distributions; ``fused`` is their weighted sum and
    ``chosen`` its argmax under the lowest-index tie-break.
    """

    position: int
    token_ids: tuple[int, ...]
    p_fluency: tuple[float, ...]
    p_match: tuple[float, ...]
    p_control: tuple[float, ...]
    fused: tuple[float, ...]
    chosen: int

    def __post_init__(self) -> None:
        k = len(self.token_ids)
        if k < 1:
            raise ValueError("candidate set must be nonempty")
        for name in ("p_fluency", "p_match", "p_control", "fused"):
            if len(getattr(self, name)) != k:
                raise ValueError(f"{name} must have length {k}")
        if not 0 <= self.chosen < k:
            raise ValueError("chosen index out of range")

    @property
    def chosen_token(self) -> int:
        return self.token_ids[self.chosen]


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a polishing run besides the backend."""

    n: int = DEFAULT_LENGTH
    k: int = DEFAULT_K
    iterations: int = DEFAULT_ITERATIONS
    weights: FusionWeights = field(default_factory=FusionWeights)
    order_mode: str = "shuffle"  # "sequential" | "shuffle"
    order_reshuffle_each_iter: bool = False
    seed: int = 0
    prompt_text: str = DEFAULT_PROMPT
    init_mode: str = "all_mask"  # "all_mask" | "random_tokens"
    include_prompt_in_match_text: bool = True
    control_task: "ControlTask | None" = None
    keep_incumbent: bool = False
    renormalize_topk: bool = False
    clamp_k: bool = False


@dataclass(frozen=True)
class CallCounts:
    """Ledger of scorer invocations made during a run."""

    mlm_calls: int = 0
    match_calls: int = 0
    control_calls: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "mlm_calls": self.mlm_calls,
            "match_calls": self.match_calls,
            "control_calls": self.control_calls,
        }


@dataclass(frozen=True)
class IterationSnapshot:
    """State of the canvas after one full pass over the position order."""

    iteration: int
    slots_after: tuple[int, ...]
    sentence_match_score: float
    candidate_records: tuple[CandidateSet, ...]
    changed: bool


@dataclass(frozen=True)
class RunResult:
    """Outcome of a full run: the re-ranked best caption plus the trace."""

    best_slots: tuple[int, ...]
    best_text: str
    best_iteration: int
    per_iteration: tuple[IterationSnapshot, ...]
    calls: CallCounts
    config: RunConfig
    prompt_ids: tuple[int, ...]
    manifest_hash: str

    @property
    def final_slots(self) -> tuple[int, ...]:
        return self.per_iteration[-1].slots_after


# ---------------------------------------------------------------------------
# Backend contract
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BackendManifest:
    """What a scorer backend is and which operations it answers."""

    protocol_version: int
    vocab_size: int
    mask_id: int
    supported_ops: tuple[str, ...]
    supported_control_tasks: tuple[str, ...]
    model_tags: tuple[str, ...]
    pad_id: int | None = None
    embed_dim: int | None = None

    def canonical_json(self) -> str:
        payload = {
            "protocol_version": self.protocol_version,
            "vocab_size": self.vocab_size,
            "mask_id": self.mask_id,
            "pad_id": self.pad_id,
            "supported_ops": sorted(self.supported_ops),
            "supported_control_tasks": sorted(self.supported_control_tasks),
            "model_tags": list(self.model_tags),
            "embed_dim": self.embed_dim,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


@runtime_checkable
class ScorerBackend(Protocol):
    """The triple of fluency / match / control scoring contracts.

    ``mlm_topk`` returns (token id, raw probability) pairs in descending
    probability order, ties broken by token id; ``must_include`` tokens
    are appended with their true probabilities if they did not make the
    cut. ``match_scores`` and ``control_scores`` return one finite score
    per candidate, higher meaning better. A single backend instance
    serves one run at a time; concurrent runs construct their own.
    """

    @property
    def vocab(self) -> Vocabulary: ...

    def manifest(self) -> BackendManifest: ...

    def mlm_topk(
        self,
        tokens: Sequence[int],
        mask_pos: int,
        k: int,
        must_include: Sequence[int] = (),
    ) -> list[tuple[int, float]]: ...

    def match_scores(
        self, token_rows: Sequence[Sequence[int]], texts: Sequence[str]
    ) -> list[float]: ...

    def control_scores(
        self, token_rows: Sequence[Sequence[int]], texts: Sequence[str]
    ) -> list[float]: ...

    def encode(self, text: str) -> list[int]: ...


# ---------------------------------------------------------------------------
# Pure operations
# ---------------------------------------------------------------------------


def softmax(scores: Sequence[float], temperature: float = 1.0) -> list[float]:
    """Temperature softmax with max-subtraction for overflow safety.

    Order-preserving for any temperature > 0; output sums to 1 within
    1e-12 for any finite input.
    """
    if len(scores) == 0:
        raise ValueError("softmax requires a nonempty vector")
    if not temperature > 0.0:
        raise ValueError("softmax temperature must be positive")
    top = max(scores)
    if math.isnan(top) or math.isinf(top):
        raise NumericError("softmax input contains a non-finite value")
    exps = [math.exp((s - top) / temperature) for s in scores]
    total = sum(exps)
    return [e / total for e in exps]


def fuse(
    p_fluency: Sequence[float],
    p_match: Sequence[float],
    p_control: Sequence[float],
    weights: FusionWeights,
) -> list[float]:
    """Weighted sum alpha*fluency + beta*match + gamma*control, unnormalized."""
    k = len(p_fluency)
    if len(p_match) != k or len(p_control) != k:
        raise ValueError("fuse requires vectors of identical length")
    a, b, g = weights.alpha, weights.beta, weights.gamma
    return [
        a * p_fluency[i] + b * p_match[i] + g * p_control[i] for i in range(k)
    ]


def select_argmax(fused: Sequence[float]) -> int:
    """Index of the maximum, ties broken by the lowest candidate index."""
    if len(fused) == 0:
        raise ValueError("select_argmax requires a nonempty vector")
    best = 0
    for i, v in enumerate(fused):
        if math.isnan(v):
            raise NumericError(f"fused score at index {i} is NaN")
        if v > fused[best]:
            best = i
    return best


_ORDER_MODES = ("sequential", "shuffle")
_INIT_MODES = ("all_mask", "random_tokens")


def validate_config(config: RunConfig, vocab: Vocabulary) -> list[ConfigIssue]:
    """Check a run configuration against a vocabulary.

    Returns an empty list when the configuration is runnable; otherwise
    one issue per violation, each with a stable machine-readable code.
    """
    issues: list[ConfigIssue] = []
    w = config.weights
    if config.n < 1:
        issues.append(ConfigIssue("CODE_N_RANGE", f"sentence length {config.n} < 1"))
    if config.k < 1:
        issues.append(ConfigIssue("CODE_K_RANGE", f"candidate count {config.k} < 1"))
    elif config.k > vocab.size and not config.clamp_k:
        issues.append(
            ConfigIssue(
                "CODE_K_RANGE",
                f"candidate count {config.k} exceeds vocabulary size "
                f"{vocab.size} (set clamp_k to clamp instead)",
            )
        )
    if config.iterations < 1:
        issues.append(
            ConfigIssue("CODE_T_RANGE", f"iteration count {config.iterations} < 1")
        )
    if w.alpha < 0 or w.beta < 0 or w.gamma < 0:
        issues.append(ConfigIssue("CODE_WEIGHT_RANGE", "weights must be nonnegative"))
    elif w.alpha == 0 and w.beta == 0 and w.gamma == 0:
        issues.append(
            ConfigIssue("CODE_NO_SIGNAL", "at least one fusion weight must be positive")
        )
    if not w.match_temperature > 0 or not w.control_temperature > 0:
        issues.append(
            ConfigIssue("CODE_TEMP_RANGE", "softmax temperatures must be positive")
        )
    if config.order_mode not in _ORDER_MODES:
        issues.append(
            ConfigIssue("CODE_ORDER_MODE", f"unknown order mode {config.order_mode!r}")
        )
    if config.init_mode not in _INIT_MODES:
        issues.append(
            ConfigIssue("CODE_INIT_MODE", f"unknown init mode {config.init_mode!r}")
        )
    task = config.control_task
    if (task is None or task.kind == "none") and w.gamma != 0:
        issues.append(
            ConfigIssue(
                "CODE_CONTROL_GAMMA",
                "control weight is positive but no control task is configured",
            )
        )
    return issues
