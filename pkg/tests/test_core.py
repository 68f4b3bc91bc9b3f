from __future__ import annotations

import math

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capolish.core import (
    CandidateSet,
    CaptionState,
    FusionWeights,
    RunConfig,
    Vocabulary,
    fuse,
    select_argmax,
    softmax,
    validate_config,
)
from capolish.errors import NumericError


def softmax_oracle(scores, temperature):
    """Direct exp/sum at 50 decimal digits of precision."""
    with mpmath.workdps(50):
        exps = [mpmath.exp(mpmath.mpf(repr(s)) / mpmath.mpf(repr(temperature))) for s in scores]
        total = sum(exps)
        return [float(e / total) for e in exps]


class TestSoftmax:
    def test_uniform_on_equal_scores(self):
        assert softmax([0.0, 0.0, 0.0]) == pytest.approx([1 / 3] * 3, abs=1e-15)

    def test_analytic_two_point(self):
        out = softmax([math.log(2.0), 0.0])
        assert out == pytest.approx([2 / 3, 1 / 3], abs=1e-15)

    def test_matches_extended_precision_oracle(self):
        scores = [1.25, -0.5, 3.0, 0.125, 2.875, -2.0]
        out = softmax(scores, 0.5)
        expect = softmax_oracle(scores, 0.5)
        assert out == pytest.approx(expect, rel=1e-12)
        assert abs(sum(out) - 1.0) < 1e-12
        assert select_argmax(out) == select_argmax(scores)

    def test_sum_to_one_long_vector(self):
        scores = [math.sin(i * 0.37) * 5 for i in range(10_000)]
        assert abs(sum(softmax(scores)) - 1.0) < 1e-12

    def test_overflow_safe(self):
        out = softmax([1000.0, 999.0])
        assert out == pytest.approx([math.e / (1 + math.e), 1 / (1 + math.e)], rel=1e-12)

    def test_rejects_empty_and_bad_temperature(self):
        with pytest.raises(ValueError):
            softmax([])
        with pytest.raises(ValueError):
            softmax([1.0], temperature=0.0)

    @given(
        st.lists(
            st.floats(min_value=-50, max_value=50).map(lambda x: round(x, 6)),
            min_size=1,
            max_size=200,
        ),
        st.sampled_from([0.25, 0.5, 1.0, 2.0, 5.0]),
    )
    @settings(max_examples=200, deadline=None)
    def test_properties(self, scores, temperature):
        out = softmax(scores, temperature)
        assert abs(sum(out) - 1.0) < 1e-12
        assert all(p >= 0.0 for p in out)
        # Adding a constant to every score leaves the distribution alone.
        shifted = softmax([s + 7.5 for s in scores], temperature)
        assert shifted == pytest.approx(out, abs=1e-12)
        # Argmax survives the softmax at any temperature.
        assert select_argmax(out) == select_argmax(scores)


class TestFuse:
    def test_identity_under_single_weight(self):
        w = FusionWeights(alpha=1.0, beta=0.0, gamma=0.0)
        assert fuse([0.5, 0.3, 0.2], [0.1, 0.2, 0.7], [0.0] * 3, w) == [0.5, 0.3, 0.2]

    def test_hand_arithmetic(self):
        w = FusionWeights(alpha=0.02, beta=2.0, gamma=0.0)
        fused = fuse([0.2, 0.1], [0.3, 0.7], [0.0, 0.0], w)
        assert fused == pytest.approx([0.604, 1.402], abs=1e-12)
        assert select_argmax(fused) == 1

    def test_paper_default_weights_accepted(self):
        w = FusionWeights(alpha=0.02, beta=2.0, gamma=5.0)
        fused = fuse([0.5], [1.0], [1.0], w)
        assert fused == pytest.approx([0.02 * 0.5 + 2.0 + 5.0], abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            fuse([0.1], [0.2, 0.3], [0.0], FusionWeights())

    @given(
        st.lists(st.floats(min_value=0, max_value=1), min_size=1, max_size=50),
        st.floats(min_value=0, max_value=8).map(lambda x: round(x, 4)),
    )
    @settings(max_examples=100, deadline=None)
    def test_linearity_in_weights(self, probs, lam):
        k = len(probs)
        ones = [1.0 / k] * k
        w = FusionWeights(alpha=0.4, beta=1.0, gamma=0.0)
        scaled_inputs = fuse([lam * p for p in probs], ones, [0.0] * k, w)
        scaled_weight = fuse(
            probs, ones, [0.0] * k, FusionWeights(alpha=0.4 * lam, beta=1.0, gamma=0.0)
        )
        assert scaled_inputs == pytest.approx(scaled_weight, abs=1e-12)


class TestSelectArgmax:
    def test_plain_maximum(self):
        assert select_argmax([1.0, 2.0, 0.5]) == 1

    def test_tie_breaks_low_index(self):
        assert select_argmax([0.7, 0.7]) == 0

    def test_matches_linear_scan(self):
        values = [0.3, 0.9, 0.9, 0.1, 0.85]
        best = max(range(len(values)), key=lambda i: (values[i], -i))
        assert select_argmax(values) == best

    def test_nan_raises(self):
        with pytest.raises(NumericError):
            select_argmax([0.1, float("nan")])

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            select_argmax([])


class TestCandidateSet:
    def test_fused_recomputable(self):
        w = FusionWeights(alpha=0.02, beta=2.0, gamma=5.0)
        p_f, p_m, p_c = [0.4, 0.1], [0.5, 0.5], [0.25, 0.75]
        fused = fuse(p_f, p_m, p_c, w)
        record = CandidateSet(
            position=0,
            token_ids=(1, 2),
            p_fluency=tuple(p_f),
            p_match=tuple(p_m),
            p_control=tuple(p_c),
            fused=tuple(fused),
            chosen=select_argmax(fused),
        )
        again = fuse(record.p_fluency, record.p_match, record.p_control, w)
        assert list(record.fused) == again
        assert record.chosen == select_argmax(again)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            CandidateSet(0, (1, 2), (0.5,), (0.5, 0.5), (0.0, 0.0), (0.5, 0.5), 0)


class TestVocabulary:
    def test_detokenize_joins_wordpieces(self):
        vocab = Vocabulary(size=4, mask_id=0, surface=("[MASK]", "walk", "##ing", "dog"))
        assert vocab.detokenize([3, 1, 2]) == "dog walking"

    def test_encode_round_trip(self, toy7):
        vocab = toy7.vocab
        assert vocab.encode("a cat sits") == [1, 2, 4]
        with pytest.raises(ValueError):
            vocab.encode("a zebra")

    def test_invariants(self):
        with pytest.raises(ValueError):
            Vocabulary(size=2, mask_id=5, surface=("a", "b"))
        with pytest.raises(ValueError):
            Vocabulary(size=3, mask_id=0, surface=("a", "b"))


class TestCaptionState:
    def test_frozen_slot_rejects_writes(self):
        state = CaptionState(prompt=(), slots=(1, 2), frozen=(False, True), mask_id=0)
        with pytest.raises(ValueError):
            state.with_token(1, 3)
        updated = state.with_token(0, 3)
        assert updated.slots == (3, 2)
        assert state.slots == (1, 2)

    def test_editable_indices(self):
        state = CaptionState(prompt=(), slots=(1, 2, 3), frozen=(True, False, True), mask_id=0)
        assert state.editable_indices() == [1]


class TestValidateConfig:
    def test_paper_scale_config_ok(self, toy7):
        vocab = Vocabulary(size=300, mask_id=0, surface=tuple(f"w{i}" for i in range(300)))
        config = RunConfig(n=12, k=200, iterations=15, prompt_text="")
        assert validate_config(config, vocab) == []

    def test_k_zero(self, toy7):
        issues = validate_config(RunConfig(k=0), toy7.vocab)
        assert any(i.code == "CODE_K_RANGE" for i in issues)

    def test_k_exceeds_vocab_without_clamp(self, toy7):
        issues = validate_config(RunConfig(k=200, clamp_k=False), toy7.vocab)
        assert any(i.code == "CODE_K_RANGE" for i in issues)
        assert validate_config(RunConfig(k=200, clamp_k=True), toy7.vocab) == []

    def test_no_signal(self, toy7):
        config = RunConfig(k=5, weights=FusionWeights(alpha=0, beta=0, gamma=0))
        issues = validate_config(config, toy7.vocab)
        assert any(i.code == "CODE_NO_SIGNAL" for i in issues)

    def test_bad_ranges(self, toy7):
        config = RunConfig(
            n=0,
            k=5,
            iterations=0,
            weights=FusionWeights(match_temperature=0.0),
        )
        codes = {i.code for i in validate_config(config, toy7.vocab)}
        assert {"CODE_N_RANGE", "CODE_T_RANGE", "CODE_TEMP_RANGE"} <= codes

    def test_gamma_without_task(self, toy7):
        config = RunConfig(k=5, weights=FusionWeights(gamma=5.0))
        codes = {i.code for i in validate_config(config, toy7.vocab)}
        assert "CODE_CONTROL_GAMMA" in codes
