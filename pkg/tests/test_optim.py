"""Tests for the optimizer, clipping, and the learning-rate schedule."""

import numpy as np
import pytest

from kvbabel.errors import ConfigError, NumericError
from kvbabel.optim import OptimState, TrainConfig, adamw_step, clip_global_norm, lr_at
from kvbabel.tensor import Rng, Tensor


class TestSchedule:
    CFG = TrainConfig(total_steps=2000, warmup_steps=100, init_lr=1e-6, peak_lr=3e-4)

    def test_starts_at_init_lr(self):
        assert lr_at(0, self.CFG) == 1e-6

    def test_peak_at_warmup_end(self):
        assert abs(lr_at(100, self.CFG) - 3e-4) < 1e-15

    def test_decays_to_zero(self):
        assert abs(lr_at(2000, self.CFG)) < 1e-12

    def test_monotone_warmup_then_decay(self):
        values = [lr_at(s, self.CFG) for s in range(0, 2001, 50)]
        ramp = values[:3]
        assert ramp == sorted(ramp)
        tail = values[2:]
        assert tail == sorted(tail, reverse=True)

    def test_zero_warmup(self):
        cfg = TrainConfig(total_steps=100, warmup_steps=0, peak_lr=1e-3)
        assert lr_at(0, cfg) == 1e-3
        assert abs(lr_at(100, cfg)) < 1e-12

    def test_warmup_cannot_exceed_total(self):
        with pytest.raises(ConfigError):
            TrainConfig(total_steps=10, warmup_steps=11)


class TestClipping:
    def test_below_threshold_noop(self):
        g = [np.array([0.3, 0.4])]
        scale = clip_global_norm(g, 1.0)
        assert scale == 1.0
        np.testing.assert_array_equal(g[0], [0.3, 0.4])

    def test_rescales_to_unit_norm(self):
        g = [np.array([3.0, 4.0])]
        scale = clip_global_norm(g, 1.0)
        assert abs(scale - 0.2) < 1e-12
        np.testing.assert_allclose(g[0], [0.6, 0.8], atol=1e-12)

    def test_post_clip_norm_bounded(self):
        rng = Rng(1)
        for trial in range(10):
            grads = [rng.normal((4, 7), std=3.0), rng.normal(11, std=0.1)]
            clip_global_norm(grads, 1.0)
            norm = np.sqrt(sum((g * g).sum() for g in grads))
            assert norm <= 1.0 + 1e-9

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            clip_global_norm([np.array([np.nan])], 1.0)


class TestAdamW:
    def test_zero_grads_zero_decay_fixed_point(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        state = OptimState([("p", p)], weight_decay=0.0)
        adamw_step([("p", p)], state, lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_single_step_matches_hand_rolled_oracle(self):
        # f(w) = w^2 at w=1: gradient 2. Hand-computed AdamW update:
        b1, b2, eps, wd, lr = 0.9, 0.999, 1e-8, 1e-4, 0.01
        g = 2.0
        m = (1 - b1) * g
        v = (1 - b2) * g * g
        mh = m / (1 - b1)
        vh = v / (1 - b2)
        expected = 1.0 - lr * (mh / (np.sqrt(vh) + eps) + wd * 1.0)

        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([2.0])
        state = OptimState([("w", p)], beta1=b1, beta2=b2, eps=eps, weight_decay=wd)
        adamw_step([("w", p)], state, lr=lr)
        assert abs(p.data[0] - expected) < 1e-12

    def test_weight_decay_shrinks_params(self):
        p = Tensor(np.array([1.0, -0.5]), requires_grad=True)
        p.grad = np.zeros(2)
        state = OptimState([("p", p)], weight_decay=0.1)
        before = np.abs(p.data.copy())
        adamw_step([("p", p)], state, lr=0.05)
        assert np.all(np.abs(p.data) < before)

    def test_bias_correction_over_steps(self):
        # constant gradient: after many steps the update approaches lr * sign
        p = Tensor(np.array([0.0]), requires_grad=True)
        state = OptimState([("p", p)], weight_decay=0.0)
        for _ in range(200):
            p.grad = np.array([1.0])
            adamw_step([("p", p)], state, lr=0.001)
        assert abs(p.data[0] + 200 * 0.001) < 0.01

    def test_missing_grad_treated_as_zero(self):
        p = Tensor(np.array([3.0]), requires_grad=True)
        state = OptimState([("p", p)], weight_decay=0.0)
        adamw_step([("p", p)], state, lr=0.1)
        assert p.data[0] == 3.0
