"""Lion update arithmetic, decay masking, and the token-keyed LR schedule."""

import numpy as np
import pytest

from layertrim.optim import Lion, LrSchedule, decay_enabled
from layertrim.tensor import Tensor


def param(name, value, grad=None):
    p = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
    if grad is not None:
        p.grad = np.asarray(grad, dtype=np.float64)
    return name, p


class TestLion:
    def test_zero_grad_zero_momentum_is_fixed_point(self):
        name, p = param("w.weight", [1.0, -2.0], grad=[0.0, 0.0])
        lion = Lion([(name, p)], weight_decay=0.0)
        lion.step(0.1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        np.testing.assert_array_equal(lion.slots[0][2], [0.0, 0.0])

    def test_hand_step(self):
        name, p = param("w.weight", [1.0], grad=[2.0])
        lion = Lion([(name, p)], beta1=0.9, beta2=0.95, weight_decay=0.0)
        lion.step(0.1)
        # c = 0.9*0 + 0.1*2 = 0.2 -> sign 1 -> p = 1 - 0.1; m = 0.05*2 = 0.1
        np.testing.assert_allclose(p.data, [0.9], rtol=1e-12)
        np.testing.assert_allclose(lion.slots[0][2], [0.1], rtol=1e-12)

    def test_decay_masked_for_gain_and_bias(self):
        entries = [
            param("layers.0.fused_in.weight", [1.0], grad=[0.0]),
            param("layers.0.pre_ln.gain", [1.0], grad=[0.0]),
            param("layers.0.fused_in.bias", [1.0], grad=[0.0]),
        ]
        lion = Lion(entries, weight_decay=0.1)
        lion.step(0.1)
        weight, gain, bias = (p for _, p in entries)
        # zero grad: sign term is 0, so only decayed params move
        np.testing.assert_allclose(weight.data, [1.0 - 0.1 * 0.1 * 1.0], rtol=1e-12)
        np.testing.assert_array_equal(gain.data, [1.0])
        np.testing.assert_array_equal(bias.data, [1.0])

    def test_update_magnitude_bound(self):
        rng = np.random.default_rng(0)
        name, p = param("w.weight", rng.standard_normal(64), grad=rng.standard_normal(64))
        before = p.data.copy()
        wd, lr = 0.1, 0.05
        lion = Lion([(name, p)], weight_decay=wd)
        lion.step(lr)
        delta = np.abs(p.data - before)
        assert (delta <= lr * (1.0 + wd * np.abs(before)) + 1e-12).all()

    def test_sign_zero_is_zero(self):
        name, p = param("w.weight", [3.0], grad=[0.0])
        lion = Lion([(name, p)], weight_decay=0.0)
        lion.step(1.0)  # c stays 0 -> no drift
        np.testing.assert_array_equal(p.data, [3.0])

    def test_decay_rule_names(self):
        assert decay_enabled("tok_emb")
        assert decay_enabled("layers.3.fused_out.weight")
        assert not decay_enabled("layers.3.fused_out.bias")
        assert not decay_enabled("final_ln.gain")

    def test_state_roundtrip(self):
        name, p = param("w.weight", [1.0, 2.0], grad=[0.5, -0.5])
        lion = Lion([(name, p)], weight_decay=0.0)
        lion.step(0.01)
        blobs = {k: v.copy() for k, v in lion.named_state()}
        fresh = Lion([(name, p)], weight_decay=0.0)
        fresh.load_state(blobs)
        np.testing.assert_array_equal(fresh.slots[0][2], lion.slots[0][2])


class TestLrSchedule:
    def test_peak_at_warmup_end(self):
        sched = LrSchedule(peak_lr=3e-4, warmup_tokens=1000, total_tokens=10000)
        assert sched.lr_at(1000) == pytest.approx(3e-4)

    def test_final_is_tenth_of_peak(self):
        sched = LrSchedule(peak_lr=3e-4, warmup_tokens=1000, total_tokens=10000)
        assert sched.lr_at(10000) == pytest.approx(3e-5)

    def test_cosine_midpoint(self):
        sched = LrSchedule(peak_lr=1.0, warmup_tokens=0, total_tokens=2000)
        assert sched.lr_at(1000) == pytest.approx(0.55)

    def test_warmup_is_linear_from_zero(self):
        sched = LrSchedule(peak_lr=1.0, warmup_tokens=100, total_tokens=1000)
        assert sched.lr_at(0) == 0.0
        assert sched.lr_at(50) == pytest.approx(0.5)

    def test_clamps_past_total(self):
        sched = LrSchedule(peak_lr=1.0, warmup_tokens=0, total_tokens=100)
        assert sched.lr_at(150) == pytest.approx(0.1)

    def test_continuity_at_batch_granularity(self):
        sched = LrSchedule(peak_lr=1.0, warmup_tokens=512, total_tokens=51200)
        batch = 128
        # analytic slope bounds: warmup peak/warmup, decay 0.9*pi/(2*span)
        decay_bound = 0.9 * np.pi / (2 * (sched.total_tokens - sched.warmup_tokens))
        bound = batch * max(1.0 / sched.warmup_tokens, decay_bound) + 1e-12
        values = [sched.lr_at(t) for t in range(0, 51201, batch)]
        steps = np.abs(np.diff(values))
        assert steps.max() <= bound

    def test_non_increasing_after_warmup(self):
        sched = LrSchedule(peak_lr=1.0, warmup_tokens=100, total_tokens=1000)
        values = [sched.lr_at(t) for t in range(100, 1001, 10)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_violations_enumerated(self):
        sched = LrSchedule(peak_lr=-1.0, warmup_tokens=500, total_tokens=100)
        problems = sched.violations()
        assert len(problems) == 2
