"""CTC loss, gradient, decoding, and agreement with the enumeration oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intermpl.ctc import (
    InfeasibleTargetError,
    best_path_decode,
    brute_force_ctc_loss,
    canonical_path,
    collapse,
    ctc_loss,
    log_softmax_rows,
    min_frames,
)


def random_posteriorgram(rng, frames, classes):
    return log_softmax_rows(rng.normal(0.0, 1.5, size=(frames, classes)))


class TestCollapse:
    def test_merges_repeats_and_drops_blanks(self):
        assert collapse([1, 1, 0, 2]) == [1, 2]

    def test_all_blank(self):
        assert collapse([0, 0, 0]) == []

    def test_blank_separates_repeat(self):
        assert collapse([1, 0, 1]) == [1, 1]

    def test_empty_path(self):
        assert collapse([]) == []

    @given(st.lists(st.integers(min_value=0, max_value=3), max_size=12))
    def test_collapse_is_idempotent_through_expansion(self, path):
        target = collapse(path)
        frames = max(len(path), min_frames(target), 1)
        assert collapse(canonical_path(target, frames)) == target


class TestCtcLoss:
    def test_single_frame_single_token(self):
        rng = np.random.default_rng(1)
        lp = random_posteriorgram(rng, 1, 4)
        res = ctc_loss(lp, [2])
        assert res.loss == pytest.approx(-lp[0, 2], abs=1e-12)

    def test_empty_target_is_all_blank_path(self):
        rng = np.random.default_rng(2)
        lp = random_posteriorgram(rng, 5, 3)
        res = ctc_loss(lp, [])
        assert res.loss == pytest.approx(-lp[:, 0].sum(), abs=1e-10)

    def test_t3_two_tokens_equals_enumeration(self):
        rng = np.random.default_rng(3)
        lp = random_posteriorgram(rng, 3, 3)  # |V|=2, 27 paths
        res = ctc_loss(lp, [1, 2])
        assert res.loss == pytest.approx(brute_force_ctc_loss(lp, [1, 2]), abs=1e-9)

    def test_infeasible_raises(self):
        rng = np.random.default_rng(4)
        lp = random_posteriorgram(rng, 2, 3)
        with pytest.raises(InfeasibleTargetError):
            ctc_loss(lp, [1, 2, 1])  # needs 3 frames
        with pytest.raises(InfeasibleTargetError):
            ctc_loss(lp, [1, 1])  # repeat needs 3 frames

    def test_out_of_range_token(self):
        rng = np.random.default_rng(5)
        lp = random_posteriorgram(rng, 3, 3)
        with pytest.raises(ValueError):
            ctc_loss(lp, [3])
        with pytest.raises(ValueError):
            ctc_loss(lp, [0])

    def test_unnormalized_rows_rejected(self):
        with pytest.raises(ValueError):
            ctc_loss(np.zeros((2, 3)), [1])

    def test_loss_is_a_probability(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            T = int(rng.integers(1, 6))
            C = int(rng.integers(2, 5))
            lp = random_posteriorgram(rng, T, C)
            U = int(rng.integers(0, min(T, 3) + 1))
            target = list(rng.integers(1, C, size=U))
            if min_frames(target) > T:
                continue
            loss = ctc_loss(lp, target).loss
            assert loss >= 0.0
            assert 0.0 < math.exp(-loss) <= 1.0

    def test_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(7)
        lp = random_posteriorgram(rng, 5, 4)
        res = ctc_loss(lp, [1, 3, 1])
        np.testing.assert_allclose(res.logit_grads.sum(axis=1), 0.0, atol=1e-9)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        worst = 0.0
        for _ in range(20):
            T = int(rng.integers(2, 6))
            C = int(rng.integers(2, 5))
            logits = rng.normal(0.0, 1.0, size=(T, C))
            U = int(rng.integers(0, min(T, 3) + 1))
            target = list(rng.integers(1, C, size=U))
            if min_frames(target) > T:
                continue
            res = ctc_loss(log_softmax_rows(logits), target)
            h = 1e-4
            fd = np.zeros_like(logits)
            for t in range(T):
                for c in range(C):
                    orig = logits[t, c]
                    logits[t, c] = orig + h
                    lp = ctc_loss(log_softmax_rows(logits), target).loss
                    logits[t, c] = orig - h
                    lm = ctc_loss(log_softmax_rows(logits), target).loss
                    logits[t, c] = orig
                    fd[t, c] = (lp - lm) / (2 * h)
            denom = np.maximum(np.maximum(np.abs(fd), np.abs(res.logit_grads)), 1e-3)
            worst = max(worst, float(np.max(np.abs(fd - res.logit_grads) / denom)))
        assert worst < 1e-4

    def test_feasibility_depends_only_on_frame_count(self):
        # growing T keeps a feasible pair feasible
        rng = np.random.default_rng(9)
        target = [1, 1, 2]
        base = min_frames(target)
        for extra in range(3):
            lp = random_posteriorgram(rng, base + extra, 3)
            ctc_loss(lp, target)  # must not raise


class TestBruteForce:
    def test_hand_enumerated_uniform_case(self):
        # T=2, one real token, uniform rows: 3 of the 4 paths collapse to (a)
        lp = np.log(np.full((2, 2), 0.5))
        assert brute_force_ctc_loss(lp, [1]) == pytest.approx(-math.log(0.75), abs=1e-12)

    def test_infeasible_matches_ctc_loss_error(self):
        rng = np.random.default_rng(10)
        lp = random_posteriorgram(rng, 2, 3)
        with pytest.raises(InfeasibleTargetError):
            brute_force_ctc_loss(lp, [1, 2, 1])

    def test_refuses_large_instances(self):
        rng = np.random.default_rng(11)
        lp = random_posteriorgram(rng, 30, 5)
        with pytest.raises(ValueError, match="refused"):
            brute_force_ctc_loss(lp, [1])

    def test_oracle_equivalence_on_random_instances(self):
        # the acceptance suite runs the full 200-instance sweep; this is a
        # faster smoke version of the same agreement
        rng = np.random.default_rng(12)
        checked = 0
        while checked < 60:
            T = int(rng.integers(1, 6))
            C = int(rng.integers(2, 5))
            lp = random_posteriorgram(rng, T, C)
            U = int(rng.integers(0, 4))
            target = list(rng.integers(1, C, size=U))
            feasible = min_frames(target) <= T
            if feasible:
                assert ctc_loss(lp, target).loss == pytest.approx(
                    brute_force_ctc_loss(lp, target), abs=1e-9
                )
            else:
                with pytest.raises(InfeasibleTargetError):
                    ctc_loss(lp, target)
                with pytest.raises(InfeasibleTargetError):
                    brute_force_ctc_loss(lp, target)
            checked += 1


class TestBestPath:
    def test_argmax_then_collapse(self):
        lp = np.log(
            np.array(
                [
                    [0.1, 0.8, 0.1],
                    [0.2, 0.7, 0.1],
                    [0.9, 0.05, 0.05],
                    [0.1, 0.2, 0.7],
                ]
            )
        )
        assert best_path_decode(lp) == [1, 2]

    def test_all_blank(self):
        lp = np.log(np.array([[0.9, 0.1], [0.8, 0.2]]))
        assert best_path_decode(lp) == []

    def test_shift_invariance(self):
        rng = np.random.default_rng(13)
        logits = rng.normal(size=(6, 4))
        lp = log_softmax_rows(logits)
        shifted = logits + rng.normal(size=(6, 1))
        assert best_path_decode(lp) == best_path_decode(log_softmax_rows(shifted))

    def test_blank_wins_ties(self):
        lp = log_softmax_rows(np.zeros((3, 4)))  # exact ties everywhere
        assert best_path_decode(lp) == []


class TestRoundTrip:
    @given(
        st.lists(st.integers(min_value=1, max_value=3), max_size=5),
        st.integers(min_value=0, max_value=4),
    )
    @settings(max_examples=200)
    def test_canonical_expansion_collapses_back(self, target, slack):
        frames = 2 * len(target) + slack if target else max(1, slack)
        assert collapse(canonical_path(target, frames)) == target
