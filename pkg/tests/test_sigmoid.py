from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from specverify.dist import InvalidInputError, ScaleBounds, sigmoid_scaled, softmax
from specverify.fused import plan_tiles
from specverify.instances import synth_step
from specverify.sigmoid import SigmoidStepInputs, materialize, verify_sigmoid_fused, verify_sigmoid_sequential
from specverify.validation import argmax_agrees, compare_results, instance_rng


def logistic(t: float) -> float:
    return 1.0 / (1.0 + math.exp(-t))


ASR = ScaleBounds(-1e3, 1e3)


class TestExamples:
    def test_identical_logits_accept_all(self, rng):
        z = rng.normal(0, 5, (2, 4, 30))
        inputs = SigmoidStepInputs(z, z, ASR, rng.integers(0, 30, (2, 4)), rng.random((2, 5)) * 0.999)
        result, _ = verify_sigmoid_fused(inputs)
        assert (result.tau == 1.0).all() and (result.accepted_len == 4).all()

    def test_two_token_analytic(self):
        inputs = SigmoidStepInputs([[[0.0, 0.0]]], [[[2000.0, -2000.0]]], ASR, [[0]], [[0.5, 0.5]])
        result, _ = verify_sigmoid_fused(inputs)
        p_hat, q_hat = logistic(0.5), logistic(1.5)
        assert p_hat == pytest.approx(0.6225, abs=1e-4) and q_hat == pytest.approx(0.8176, abs=1e-4)
        assert logistic(-0.5) == pytest.approx(0.3775, abs=1e-4)
        assert result.tau[0, 0] == pytest.approx(p_hat / q_hat, rel=1e-12)
        assert result.tau[0, 0] == pytest.approx(0.7614, abs=1e-4)

    def test_wide_bounds_accept_everything(self, rng):
        z_p = rng.uniform(-1e3, 1e3, (4, 6, 64))
        z_q = rng.uniform(-1e3, 1e3, (4, 6, 64))
        wide = ScaleBounds.symmetric(1e9)
        p_hat = sigmoid_scaled(z_p, wide).values
        # (z - alpha) / (beta - alpha) -> 1/2, so every entry collapses onto sigma(1/2)
        assert np.abs(p_hat - logistic(0.5)).max() <= 1e-6
        u = rng.random((4, 7)) * (1 - 1e-5)
        result, _ = verify_sigmoid_fused(SigmoidStepInputs(z_p, z_q, wide, rng.integers(0, 64, (4, 6)), u))
        assert (result.tau >= 1 - 1e-5).all()
        assert (result.accepted_len == 6).all()

    def test_rejects_non_finite_logits(self):
        with pytest.raises(InvalidInputError):
            SigmoidStepInputs([[[np.inf, 0.0]]], [[[0.0, 0.0]]], ASR, [[0]], [[0.5, 0.5]])

    def test_bounds_type_checked(self):
        with pytest.raises(InvalidInputError):
            SigmoidStepInputs([[[0.0, 0.0]]], [[[0.0, 0.0]]], (-1.0, 1.0), [[0]], [[0.5, 0.5]])


class TestProperties:
    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 4]), st.integers(1, 20),
           st.sampled_from([7, 257, 2000]), st.sampled_from([4, 256, 1024]),
           st.sampled_from([1e1, 1e2, 1e3]), st.booleans())
    def test_matches_sequential_oracle(self, seed, B, gamma, V, n, scale, half):
        step = synth_step(instance_rng(seed), B, gamma, V, logit_scale=12.0, divergence=2.0, tie_prob=0.2)
        inputs = step.sigmoid(ScaleBounds.symmetric(scale), half_precision=half)
        result, trace = verify_sigmoid_fused(inputs, plan_tiles(V, n))
        assert compare_results(verify_sigmoid_sequential(inputs), result) == []
        assert trace.hbm_elem_reads_p == trace.hbm_elem_reads_q == B * gamma * V

    @given(st.integers(0, 2**32 - 1), st.sampled_from([1e1, 1e3, 1e4]))
    def test_argmax_matches_softmax(self, seed, scale):
        z = np.random.default_rng(seed).normal(0, 4, (3, 5, 300))
        assert argmax_agrees(z, ScaleBounds.symmetric(scale))

    def test_not_normalized(self, rng):
        z = rng.normal(0, 3, (50, 16))
        rows = materialize(SigmoidStepInputs(z[None, :1], z[None, 1:2], ASR, [[0]], [[0.1, 0.1]])).p
        assert np.abs(rows.sum(axis=-1) - 1.0).min() > 0.01
        assert np.abs(sigmoid_scaled(z, ASR).values.sum(axis=-1) - 1).min() > 0.01
        assert sigmoid_scaled(z[0], ASR).normalized is False

    @pytest.mark.parametrize("workers", [2, 8])
    def test_worker_count_is_invisible(self, workers):
        step = synth_step(instance_rng(5), 4, 6, 30_000, logit_scale=12.0)
        inputs = step.sigmoid(ScaleBounds.symmetric(10.0))
        plan = plan_tiles(30_000, 1024)
        a, ta = verify_sigmoid_fused(inputs, plan, 1)
        b, tb = verify_sigmoid_fused(inputs, plan, workers)
        for f in ("accepted_len", "tau", "final_token", "resample_used", "residual_mass"):
            assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
        assert ta == tb


class TestHalfPrecision:
    def test_1e5_poisons_every_decision(self, rng):
        z = rng.normal(0, 3, (1, 3, 32))
        inputs = SigmoidStepInputs(z, z[:, :2] + 0.1, ScaleBounds.symmetric(1e5), rng.integers(0, 32, (1, 2)),
                                   rng.random((1, 3)), half_precision=True)
        result, _ = verify_sigmoid_fused(inputs)
        assert np.isnan(result.tau).all()
        assert result.accepted_len[0] == 0
        # no usable mass: the uniform fallback still yields an in-range token
        assert 0 <= result.final_token[0] < 32
        # the scalar oracle refuses NaN probabilities outright
        with pytest.raises(InvalidInputError):
            verify_sigmoid_sequential(inputs)

    def test_1e3_stays_finite(self, rng):
        z = rng.normal(0, 3, (1, 2, 32))
        inputs = SigmoidStepInputs(z, z[:, :1], ASR, [[0]], [[0.5, 0.5]], half_precision=True)
        assert np.isfinite(verify_sigmoid_fused(inputs)[0].tau).all()


def test_sigmoid_branch_reaches_rejections():
    # make sure the oracle grid is not trivially all-accept
    step = synth_step(instance_rng(9), 4, 10, 257, logit_scale=12.0, divergence=2.0)
    r = verify_sigmoid_sequential(step.sigmoid(ScaleBounds.symmetric(10.0)))
    assert r.resample_used.any()
    assert (softmax(step.z_p).argmax(-1) >= 0).all()
