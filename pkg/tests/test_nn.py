"""Autodiff ops, Adam, schedules, parameter averaging, checkpoint container."""

import json
from pathlib import Path

import numpy as np
import pytest

from helpers import max_rel_error
from intermpl import autodiff as ad
from intermpl.checkpoint import read_checkpoint, write_checkpoint
from intermpl.model import ModelConfig, init_params, model_forward
from intermpl.optim import (
    LrSchedule,
    OptimizerState,
    ParamSet,
    ParamTensor,
    adam_step,
    average_params,
    clip_grad_norm,
    schedule_lr,
)

DATA = Path(__file__).parent / "data"


def _param(name, value):
    return ParamTensor(name, np.asarray(value, dtype=np.float64))


class TestOpGradients:
    """Every op kind against central finite differences, many seeds."""

    OPS = {
        "linear": lambda leaves: ad.linear(leaves["x"], leaves["w"], leaves["b"]),
        "silu": lambda leaves: ad.silu(leaves["x"]),
        "softmax": lambda leaves: ad.softmax(leaves["x"]),
        "dwconv3": lambda leaves: ad.dwconv3(leaves["x"], leaves["k"], leaves["b2"]),
        "residual": lambda leaves: ad.add(
            leaves["x"], ad.linear(ad.silu(leaves["x"]), leaves["w"], leaves["b"])
        ),
    }

    @pytest.mark.parametrize("op_name", sorted(OPS))
    def test_matches_finite_differences(self, op_name):
        h = 1e-4
        for seed in range(20):
            rng = np.random.default_rng(seed)
            params = ParamSet(
                [
                    _param("x", rng.normal(size=(5, 4))),
                    _param("w", rng.normal(size=(4, 4))),
                    _param("b", rng.normal(size=4)),
                    _param("k", rng.normal(size=(3, 4))),
                    _param("b2", rng.normal(size=4)),
                ]
            )
            # random linear functional on the output makes the loss scalar
            probe = rng.normal(size=(5, 4))

            def loss():
                leaves = {t.name: ad.param_leaf(t) for t in params}
                out = self.OPS[op_name](leaves)
                return float((out.value * probe).sum())

            params.zero_grads()
            leaves = {t.name: ad.param_leaf(t) for t in params}
            out = self.OPS[op_name](leaves)
            ad.backward([(out, probe)])

            for t in params:
                fd = np.zeros_like(t.value)
                it = np.nditer(t.value, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = t.value[idx]
                    t.value[idx] = orig + h
                    lp = loss()
                    t.value[idx] = orig - h
                    lm = loss()
                    t.value[idx] = orig
                    fd[idx] = (lp - lm) / (2 * h)
                assert max_rel_error(t.grad, fd) < 1e-4, (op_name, seed, t.name)

    def test_one_frame_dwconv_is_per_frame_map(self):
        rng = np.random.default_rng(0)
        x = _param("x", rng.normal(size=(1, 4)))
        k = _param("k", rng.normal(size=(3, 4)))
        b = _param("b", rng.normal(size=4))
        out = ad.dwconv3(ad.param_leaf(x), ad.param_leaf(k), ad.param_leaf(b))
        np.testing.assert_allclose(out.value, x.value * k.value[1] + b.value)

    def test_multi_seed_backward_accumulates(self):
        # two heads sharing one input: gradients add up
        rng = np.random.default_rng(1)
        x = _param("x", rng.normal(size=(3, 2)))
        xa = ad.param_leaf(x)
        y1 = ad.silu(xa)
        y2 = ad.add(xa, xa)
        g1 = rng.normal(size=(3, 2))
        g2 = rng.normal(size=(3, 2))
        ad.backward([(y1, g1), (y2, g2)])
        s = 1.0 / (1.0 + np.exp(-x.value))
        expected = g1 * s * (1 + x.value * (1 - s)) + 2 * g2
        np.testing.assert_allclose(x.grad, expected, atol=1e-12)

    def test_zero_seed_gives_zero_grads(self):
        x = _param("x", np.ones((2, 2)))
        out = ad.silu(ad.param_leaf(x))
        ad.backward([(out, np.zeros((2, 2)))])
        np.testing.assert_array_equal(x.grad, 0.0)

    def test_scalar_square_analytic(self):
        # loss(theta) = theta^2 at theta=3 -> grad 6, via x*silu-free path
        theta = _param("theta", np.array([[3.0]]))
        leaf = ad.param_leaf(theta)
        w = ad.constant(np.array([[1.0]]))
        sq = ad.linear(leaf, leaf, ad.constant(np.zeros(1)))  # theta @ theta
        ad.backward([(sq, np.ones((1, 1)))])
        assert theta.grad[0, 0] == pytest.approx(6.0)

    def test_nonfinite_detection(self):
        with pytest.raises(ad.NumericError):
            ad.assert_finite("layer", np.array([1.0, np.nan]))


class TestForwardGraphContracts:
    def test_zero_weights_give_uniform_heads(self):
        cfg = ModelConfig(2, 8, 4, (1, 2), "inter-ctc", (5, 5), (0, 0))
        params = init_params(cfg, np.random.default_rng(0))
        for t in params:
            t.value[...] = 0.0
        out = model_forward(params, cfg, np.random.default_rng(1).normal(size=(3, 4)))
        for lp in out.log_probs:
            np.testing.assert_allclose(lp, -np.log(6.0), atol=1e-12)

    def test_identity_linear_layer(self):
        x = np.random.default_rng(2).normal(size=(4, 3))
        w = _param("w", np.eye(3))
        b = _param("b", np.zeros(3))
        out = ad.linear(ad.constant(x), ad.param_leaf(w), ad.param_leaf(b))
        np.testing.assert_array_equal(out.value, x)

    def test_forward_determinism(self):
        cfg = ModelConfig(2, 8, 4, (2,), "ctc", (5,), (0,))
        params = init_params(cfg, np.random.default_rng(3))
        feats = np.random.default_rng(4).normal(size=(6, 4))
        a = model_forward(params, cfg, feats).log_probs[0]
        b = model_forward(params, cfg, feats).log_probs[0]
        np.testing.assert_array_equal(a, b)

    def test_golden_forward_regression(self):
        """Frozen output of a fixed seed-42 2-layer net on a fixed 3x4 input."""
        golden = json.loads((DATA / "golden_forward.json").read_text())
        cfg = ModelConfig.from_dict(golden["model"])
        params = init_params(cfg, np.random.default_rng(42))
        feats = np.asarray(golden["input"])
        out = model_forward(params, cfg, feats)
        np.testing.assert_allclose(
            out.log_probs[-1], np.asarray(golden["log_probs"]), atol=1e-12, rtol=0
        )


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = ParamSet([_param("w", np.zeros((2, 2)))])
        for t in p:
            t.grad[...] = 1.0
        opt = OptimizerState(eps=1e-12)
        adam_step(opt, p, lr=0.05)
        np.testing.assert_allclose(p["w"].value, -0.05, atol=1e-8)

    def test_zero_grads_leave_params_unchanged(self):
        p = ParamSet([_param("w", np.full((2, 2), 1.5))])
        opt = OptimizerState()
        adam_step(opt, p, lr=0.1)
        np.testing.assert_array_equal(p["w"].value, 1.5)

    def test_two_steps_match_hand_computed_recurrence(self):
        # g = 1 both steps, lr=0.1, beta1=0.9, beta2=0.999
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = ParamSet([_param("w", np.array([0.0]))])
        opt = OptimizerState(beta1=b1, beta2=b2, eps=eps)
        m = v = 0.0
        w = 0.0
        for step in (1, 2):
            m = b1 * m + (1 - b1) * 1.0
            v = b2 * v + (1 - b2) * 1.0
            w -= lr * (m / (1 - b1**step)) / ((v / (1 - b2**step)) ** 0.5 + eps)
        for _ in (1, 2):
            p["w"].grad[...] = 1.0
            adam_step(opt, p, lr=lr)
        assert p["w"].value[0] == pytest.approx(w, abs=1e-15)

    def test_grads_untouched_and_step_counts(self):
        p = ParamSet([_param("w", np.zeros(3))])
        p["w"].grad[...] = 2.0
        opt = OptimizerState()
        adam_step(opt, p, lr=0.01)
        adam_step(opt, p, lr=0.01)
        np.testing.assert_array_equal(p["w"].grad, 2.0)
        assert opt.step == 2

    def test_rejects_nonpositive_lr(self):
        p = ParamSet([_param("w", np.zeros(1))])
        with pytest.raises(ValueError):
            adam_step(OptimizerState(), p, lr=0.0)

    def test_clip_grad_norm(self):
        p = ParamSet([_param("a", np.zeros(3)), _param("b", np.zeros(4))])
        p["a"].grad[...] = 3.0
        p["b"].grad[...] = 4.0
        norm = clip_grad_norm(p, 5.0)
        assert norm == pytest.approx(np.sqrt(9 * 3 + 16 * 4))
        clipped = np.sqrt(np.sum(p["a"].grad ** 2) + np.sum(p["b"].grad ** 2))
        assert clipped == pytest.approx(5.0)


class TestSchedule:
    def test_peak_at_warmup(self):
        s = LrSchedule(kind="noam-warmup", warmup_steps=100, factor=2.0, model_dim=16)
        assert schedule_lr(s, 100) == pytest.approx(2.0 * 16**-0.5 * 100**-0.5)
        rates = [schedule_lr(s, t) for t in range(1, 400)]
        assert np.argmax(rates) + 1 == 100

    def test_monotone_up_then_down(self):
        s = LrSchedule(kind="noam-warmup", warmup_steps=50, factor=1.0, model_dim=8)
        rates = [schedule_lr(s, t) for t in range(1, 200)]
        assert all(a < b for a, b in zip(rates[:49], rates[1:50]))
        assert all(a > b for a, b in zip(rates[49:-1], rates[50:]))
        assert all(r > 0 for r in rates)

    def test_quarter_rate_at_4x_warmup(self):
        s = LrSchedule(kind="noam-warmup", warmup_steps=25, factor=1.0, model_dim=4)
        assert schedule_lr(s, 100) == pytest.approx(0.5 * schedule_lr(s, 25))

    def test_paper_scale_configuration(self):
        s = LrSchedule(kind="noam-warmup", warmup_steps=25000, factor=5.0, model_dim=256)
        peak = schedule_lr(s, 25000)
        assert peak == pytest.approx(5.0 * 256**-0.5 * 25000**-0.5)

    def test_step_zero_rejected(self):
        with pytest.raises(ValueError):
            schedule_lr(LrSchedule(), 0)

    def test_constant(self):
        s = LrSchedule(kind="constant", factor=1e-3)
        assert schedule_lr(s, 1) == schedule_lr(s, 10**6) == 1e-3


class TestAveraging:
    def _sets(self, n, seed=0):
        rng = np.random.default_rng(seed)
        sets = []
        for _ in range(n):
            sets.append(
                ParamSet(
                    [_param("a", rng.normal(size=(3, 2))), _param("b", rng.normal(size=4))]
                )
            )
        return sets

    def test_single_checkpoint_identity(self):
        (s,) = self._sets(1)
        avg = average_params([s])
        for name in s.names():
            np.testing.assert_array_equal(avg[name].value, s[name].value)

    def test_opposite_pair_cancels(self):
        a, _ = self._sets(2)
        neg = a.copy()
        for t in neg:
            t.value *= -1
        avg = average_params([a, neg])
        for t in avg:
            np.testing.assert_allclose(t.value, 0.0, atol=1e-16)

    def test_ten_random_checkpoints_mean(self):
        sets = self._sets(10, seed=7)
        avg = average_params(sets)
        for name in sets[0].names():
            expected = np.mean([s[name].value for s in sets], axis=0)
            np.testing.assert_allclose(avg[name].value, expected, atol=1e-12)

    def test_permutation_invariance(self):
        sets = self._sets(6, seed=8)
        a = average_params(sets)
        b = average_params(sets[::-1])
        for name in a.names():
            np.testing.assert_allclose(a[name].value, b[name].value, atol=1e-12, rtol=1e-12)

    def test_shape_mismatch_rejected(self):
        a = ParamSet([_param("a", np.zeros(3))])
        b = ParamSet([_param("a", np.zeros(4))])
        with pytest.raises(ValueError):
            average_params([a, b])
        with pytest.raises(ValueError):
            average_params([])


class TestCheckpointContainer:
    def test_bit_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        params = ParamSet(
            [
                _param("enc1.ff1.w", rng.normal(size=(4, 4))),
                _param("enc1.ff1.b", rng.normal(size=4)),
                _param("head2.w", rng.normal(size=(4, 6))),
            ]
        )
        meta = {"model": {"hidden": 4}, "note": "x"}
        path = tmp_path / "m.ckpt"
        write_checkpoint(path, params, meta)
        loaded, meta2 = read_checkpoint(path)
        assert meta2 == meta
        assert loaded.names() == params.names()
        for name in params.names():
            np.testing.assert_array_equal(loaded[name].value, params[name].value)
        # writing the loaded set again reproduces the file byte for byte
        path2 = tmp_path / "m2.ckpt"
        write_checkpoint(path2, loaded, meta2)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            read_checkpoint(path)

    def test_truncation_rejected(self, tmp_path):
        params = ParamSet([_param("w", np.zeros((2, 2)))])
        path = tmp_path / "t.ckpt"
        write_checkpoint(path, params, {})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="truncated"):
            read_checkpoint(path)
