"""The polishing loop: per-position masked resampling with score fusion.

A run owns a token canvas, visits every editable position once per
iteration, and at each visit re-opens the slot, asks the fluency backend
for top-K replacements, scores the K candidate sentences with the
matcher (and the control scorer when weighted), fuses, and writes back
the argmax. After all iterations the snapshot with the highest
full-sentence match score is returned as the caption.

``gibbs_lm_sample`` is the fluency-only ancestor of the loop: it samples
(or greedily picks) each token straight from the masked-LM conditional,
with no matcher in sight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .core import (
    CandidateSet,
    CaptionState,
    CallCounts,
    IterationSnapshot,
    RunConfig,
    RunResult,
    ScorerBackend,
    Vocabulary,
    fuse,
    select_argmax,
    softmax,
    validate_config,
)
from .errors import ConfigError, NothingToEditError, ScorerError
from .rng import Rng


@dataclass(frozen=True)
class PositionOrder:
    """The visit order over editable slots for one or more iterations."""

    positions: tuple[int, ...]
    mode: str
    seed: int

    def __post_init__(self) -> None:
        if len(set(self.positions)) != len(self.positions):
            raise ValueError("order must visit each position exactly once")


class _CallLedger:
    """Mutable counter shared by one run; frozen into CallCounts at the end."""

    __slots__ = ("mlm", "match", "control")

    def __init__(self) -> None:
        self.mlm = 0
        self.match = 0
        self.control = 0

    def freeze(self) -> CallCounts:
        return CallCounts(self.mlm, self.match, self.control)


def make_order(
    state: CaptionState,
    mode: str,
    rng: Rng,
    seed: int = 0,
) -> PositionOrder:
    """Draw the visit order over the non-frozen slots.

    Sequential mode is ascending; shuffle mode is a Fisher-Yates
    permutation from ``rng``. Callers decide whether to reuse the order
    across iterations or draw again.
    """
    eligible = state.editable_indices()
    if not eligible:
        raise NothingToEditError("every slot is frozen")
    if mode == "sequential":
        return PositionOrder(tuple(eligible), mode, seed)
    if mode == "shuffle":
        perm = list(eligible)
        rng.shuffle(perm)
        return PositionOrder(tuple(perm), mode, seed)
    raise ValueError(f"unknown order mode {mode!r}")


def _candidate_rows_and_texts(
    state: CaptionState,
    position: int,
    candidate_ids: Sequence[int],
    vocab: Vocabulary,
    include_prompt: bool,
) -> tuple[list[list[int]], list[str]]:
    """Token rows and detokenized texts for sentences differing at one slot."""
    base = list(state.prompt) + list(state.slots) if include_prompt else list(state.slots)
    offset = (len(state.prompt) if include_prompt else 0) + position
    rows = []
    texts = []
    for cid in candidate_ids:
        row = list(base)
        row[offset] = cid
        rows.append(row)
        texts.append(vocab.detokenize(row))
    return rows, texts


def _effective_k(config: RunConfig, vocab: Vocabulary) -> int:
    if config.k > vocab.size and config.clamp_k:
        return vocab.size
    return config.k


def polish_position(
    state: CaptionState,
    i: int,
    backend: ScorerBackend,
    config: RunConfig,
    *,
    ledger: _CallLedger | None = None,
) -> tuple[CaptionState, CandidateSet]:
    """Re-select the token at slot ``i`` and return the updated canvas.

    The slot is masked, the fluency backend proposes top-K tokens with
    their raw probabilities, the matcher (and control scorer when the
    control weight is positive) scores the K candidate sentences, and
    the fused argmax is written back. The full candidate record is
    returned for tracing.
    """
    if state.frozen[i]:
        raise ValueError(f"slot {i} is frozen")
    vocab = backend.vocab
    weights = config.weights
    k = _effective_k(config, vocab)
    incumbent = state.slots[i]

    masked_slots = list(state.slots)
    masked_slots[i] = state.mask_id
    mlm_tokens = list(state.prompt) + masked_slots
    mask_pos = len(state.prompt) + i

    must_include: tuple[int, ...] = ()
    if config.keep_incumbent and incumbent != state.mask_id:
        must_include = (incumbent,)

    try:
        pairs = backend.mlm_topk(mlm_tokens, mask_pos, k, must_include=must_include)
    except Exception as exc:
        raise ScorerError(f"fluency backend failed: {exc}", position=i) from exc
    if ledger is not None:
        ledger.mlm += 1
    if not pairs:
        raise ScorerError("fluency backend returned no candidates", position=i)

    candidate_ids = [vocab.check_token(t) for t, _ in pairs]
    p_fluency = [float(p) for _, p in pairs]
    if config.renormalize_topk:
        total = sum(p_fluency)
        if total > 0:
            p_fluency = [p / total for p in p_fluency]

    masked_state = CaptionState(
        prompt=state.prompt,
        slots=tuple(masked_slots),
        frozen=state.frozen,
        mask_id=state.mask_id,
    )
    match_rows, match_texts = _candidate_rows_and_texts(
        masked_state, i, candidate_ids, vocab, config.include_prompt_in_match_text
    )
    try:
        raw_match = backend.match_scores(match_rows, match_texts)
    except Exception as exc:
        raise ScorerError(f"match backend failed: {exc}", position=i) from exc
    if ledger is not None:
        ledger.match += 1
    if len(raw_match) != len(candidate_ids):
        raise ScorerError(
            f"match backend returned {len(raw_match)} scores for "
            f"{len(candidate_ids)} candidates",
            position=i,
        )
    p_match = softmax(raw_match, weights.match_temperature)

    if weights.gamma > 0:
        # Control scores the bare caption: prompts are not part of the
        # controlled sentence.
        ctl_rows, ctl_texts = _candidate_rows_and_texts(
            masked_state, i, candidate_ids, vocab, include_prompt=False
        )
        try:
            raw_control = backend.control_scores(ctl_rows, ctl_texts)
        except Exception as exc:
            raise ScorerError(f"control backend failed: {exc}", position=i) from exc
        if ledger is not None:
            ledger.control += 1
        if len(raw_control) != len(candidate_ids):
            raise ScorerError(
                f"control backend returned {len(raw_control)} scores for "
                f"{len(candidate_ids)} candidates",
                position=i,
            )
        p_control = softmax(raw_control, weights.control_temperature)
    else:
        p_control = [0.0] * len(candidate_ids)

    fused = fuse(p_fluency, p_match, p_control, weights)
    chosen = select_argmax(fused)

    record = CandidateSet(
        position=i,
        token_ids=tuple(candidate_ids),
        p_fluency=tuple(p_fluency),
        p_match=tuple(p_match),
        p_control=tuple(p_control),
        fused=tuple(fused),
        chosen=chosen,
    )
    new_state = masked_state.with_token(i, candidate_ids[chosen])
    return new_state, record


def _sentence_match_score(
    state: CaptionState,
    backend: ScorerBackend,
    config: RunConfig,
    ledger: _CallLedger | None,
) -> float:
    tokens = (
        state.full_tokens() if config.include_prompt_in_match_text else list(state.slots)
    )
    text = backend.vocab.detokenize(tokens)
    scores = backend.match_scores([tokens], [text])
    if ledger is not None:
        ledger.match += 1
    if len(scores) != 1:
        raise ScorerError("match backend returned a bad score count for the snapshot")
    return float(scores[0])


def run_iteration(
    state: CaptionState,
    order: PositionOrder,
    backend: ScorerBackend,
    config: RunConfig,
    *,
    iteration: int = 0,
    ledger: _CallLedger | None = None,
) -> tuple[CaptionState, IterationSnapshot]:
    """One full pass: polish every position in order, then score the sentence."""
    before = state.slots
    records = []
    for i in order.positions:
        state, record = polish_position(state, i, backend, config, ledger=ledger)
        records.append(record)
    score = _sentence_match_score(state, backend, config, ledger)
    snapshot = IterationSnapshot(
        iteration=iteration,
        slots_after=state.slots,
        sentence_match_score=score,
        candidate_records=tuple(records),
        changed=state.slots != before,
    )
    return state, snapshot


def _initial_state(config: RunConfig, backend: ScorerBackend, rng: Rng) -> CaptionState:
    vocab = backend.vocab
    prompt = tuple(backend.encode(config.prompt_text)) if config.prompt_text else ()
    task = config.control_task
    if task is not None and task.kind == "infill":
        spec = task.infill
        for t in spec.reference_tokens:
            vocab.check_token(t)
        return CaptionState(
            prompt=prompt,
            slots=spec.reference_tokens,
            frozen=spec.frozen_flags(),
            mask_id=vocab.mask_id,
        )
    if config.init_mode == "random_tokens":
        skip = {vocab.mask_id} | ({vocab.pad_id} if vocab.pad_id is not None else set())
        pool = [t for t in range(vocab.size) if t not in skip]
        slots = tuple(pool[rng.randbelow(len(pool))] for _ in range(config.n))
        return CaptionState(prompt, slots, (False,) * config.n, vocab.mask_id)
    return CaptionState.fresh(config.n, vocab.mask_id, prompt)


def run(
    config: RunConfig,
    backend: ScorerBackend,
    *,
    on_record: Callable[[int, CandidateSet], None] | None = None,
    on_snapshot: Callable[[IterationSnapshot], None] | None = None,
) -> RunResult:
    """Execute a full polishing run and return the re-ranked best caption.

    The canvas starts all-mask (or per the configured init mode / infill
    task), the position order is drawn once and reused unless per-
    iteration reshuffling is enabled, and the returned caption is the
    snapshot with the highest full-sentence match score, earliest
    iteration winning ties. Deterministic given (config, backend).

    ``on_record`` / ``on_snapshot`` stream trace events as they are
    produced, so a partial trace survives a mid-run scorer failure.
    """
    vocab = backend.vocab
    issues = validate_config(config, vocab)
    if issues:
        raise ConfigError(issues)

    rng = Rng(config.seed)
    state = _initial_state(config, backend, rng)
    ledger = _CallLedger()

    order: PositionOrder | None = None
    snapshots: list[IterationSnapshot] = []
    try:
        for t in range(config.iterations):
            if order is None or config.order_reshuffle_each_iter:
                order = make_order(state, config.order_mode, rng, seed=config.seed)
            state, snapshot = run_iteration(
                state, order, backend, config, iteration=t, ledger=ledger
            )
            if on_record is not None:
                for record in snapshot.candidate_records:
                    on_record(t, record)
            snapshots.append(snapshot)
            if on_snapshot is not None:
                on_snapshot(snapshot)
    except ScorerError as exc:
        exc.partial_snapshots = tuple(snapshots)
        raise

    best_iteration = 0
    for t, snap in enumerate(snapshots):
        if snap.sentence_match_score > snapshots[best_iteration].sentence_match_score:
            best_iteration = t
    best = snapshots[best_iteration]
    best_state = CaptionState(
        prompt=state.prompt,
        slots=best.slots_after,
        frozen=state.frozen,
        mask_id=state.mask_id,
    )
    best_tokens = (
        best_state.full_tokens()
        if config.include_prompt_in_match_text
        else list(best_state.slots)
    )
    return RunResult(
        best_slots=best.slots_after,
        best_text=vocab.detokenize(best_tokens),
        best_iteration=best_iteration,
        per_iteration=tuple(snapshots),
        calls=ledger.freeze(),
        config=config,
        prompt_ids=state.prompt,
        manifest_hash=backend.manifest().hash(),
    )


def gibbs_lm_sample(
    n: int,
    iterations: int,
    order_mode: str,
    backend: ScorerBackend,
    rng: Rng,
    mode: str = "stochastic",
) -> tuple[int, ...]:
    """Sample a sentence from the masked LM alone, no matcher involved.

    Starting from an all-mask canvas, each visit re-masks the slot and
    either samples from the full predicted distribution (``stochastic``)
    or takes the top-1 (``greedy``). The visit order is drawn once.
    """
    if n < 1:
        raise ValueError("sentence length must be >= 1")
    if mode not in ("stochastic", "greedy"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    vocab = backend.vocab
    state = CaptionState.fresh(n, vocab.mask_id)
    order = make_order(state, order_mode, rng)
    k = 1 if mode == "greedy" else vocab.size
    for _ in range(iterations):
        for i in order.positions:
            slots = list(state.slots)
            slots[i] = vocab.mask_id
            pairs = backend.mlm_topk(slots, i, k)
            if mode == "greedy":
                token = pairs[0][0]
            else:
                probs = [p for _, p in pairs]
                token = pairs[rng.choice_index(probs)][0]
            slots[i] = token
            state = CaptionState(
                state.prompt, tuple(slots), state.frozen, state.mask_id
            )
    return state.slots
