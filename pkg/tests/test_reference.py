from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from specverify.dist import NO_BONUS, InvalidInputError
from specverify.reference import StepInputs, resample_adjusted, verify_sequential
from specverify.validation import acceptance_oracle, eight_token_fixture, speculative_first_tokens, total_variation

P2 = [0.5, 0.5]
Q2 = [0.9, 0.1]


def two_token(u_accept: float, u_final: float = 0.3) -> StepInputs:
    return StepInputs([[P2]], [[Q2]], [[0]], [[u_accept, u_final]])


class TestVerifySequential:
    def test_reject_resamples_residual(self):
        r = verify_sequential(two_token(0.6))
        assert r.tau[0, 0] == pytest.approx(5 / 9)
        assert r.accepted_len[0] == 0
        assert r.resample_used[0]
        assert r.final_token[0] == 1
        assert r.residual_mass[0] == pytest.approx(0.4)

    def test_accept(self):
        r = verify_sequential(two_token(0.5))
        assert r.accepted_len[0] == 1
        assert not r.resample_used[0]
        assert r.final_token[0] == NO_BONUS
        assert r.emitted(np.array([[0]])) == [0]

    def test_acceptance_is_inclusive(self):
        p = [[[0.25, 0.75]]]
        r = verify_sequential(StepInputs(p, [[[0.5, 0.5]]], [[0]], [[0.5, 0.0]]))
        assert r.tau[0, 0] == 0.5 and r.accepted_len[0] == 1

    def test_p_equals_q_accepts_everything(self, rng):
        p = rng.dirichlet(np.ones(6), size=(3, 4))
        u = rng.random((3, 5)) * 0.999999
        r = verify_sequential(StepInputs(p, p, rng.integers(0, 6, (3, 4)), u))
        assert (r.tau == 1).all() and (r.accepted_len == 4).all()
        assert (r.final_token == NO_BONUS).all()

    def test_bonus_row_sampled_on_full_accept(self):
        p = np.array([[[0.5, 0.5], [0.0, 1.0]]])
        r = verify_sequential(StepInputs(p, [[[0.5, 0.5]]], [[1]], [[0.2, 0.1]]))
        assert r.accepted_len[0] == 1 and r.final_token[0] == 1 and not r.resample_used[0]
        assert r.emitted(np.array([[1]])) == [1, 1]

    def test_stops_at_first_rejection(self):
        p = np.tile([0.5, 0.5], (1, 3, 1))
        q = np.tile([0.9, 0.1], (1, 3, 1))
        # second position rejects; the third would accept but must not count
        r = verify_sequential(StepInputs(p, q, [[0, 0, 1]], [[0.1, 0.9, 0.0, 0.5]]))
        assert r.accepted_len[0] == 1
        assert r.final_token[0] == 1
        assert r.tau[0, 2] == 1.0

    def test_tau_for_underflowed_q(self):
        p = [[[0.5, 0.5]]]
        q = [[[1.0, 0.0]]]
        r = verify_sequential(StepInputs(p, q, [[1]], [[0.99, 0.0]]))
        assert r.tau[0, 0] == 1.0 and r.accepted_len[0] == 1

    @pytest.mark.parametrize("kwargs", [
        {"draft_tokens": [[2]]},
        {"uniforms": [[0.5]]},
        {"uniforms": [[1.0, 0.0]]},
        {"q": [[[0.9, 0.2]]]},
        {"p": [[[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]]},
        {"p": [[0.5, 0.5]]},
        {"q": [[[np.nan, 0.5]]]},
    ])
    def test_invalid_inputs(self, kwargs):
        base = {"p": [[P2]], "q": [[Q2]], "draft_tokens": [[0]], "uniforms": [[0.5, 0.5]]}
        base.update(kwargs)
        with pytest.raises(InvalidInputError):
            StepInputs(**base)

    def test_sigmoid_rows_skip_sum_check(self):
        StepInputs([[[0.6, 0.6]]], [[[0.6, 0.4]]], [[0]], [[0.5, 0.5]], normalized=False)
        with pytest.raises(InvalidInputError):
            StepInputs([[[0.6, 0.6]]], [[[0.6, 0.4]]], [[0]], [[0.5, 0.5]])

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.floats(0.0, 1.0))
    def test_monotone_in_uniforms(self, seed, gamma, shrink):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(5), size=(1, gamma))
        q = rng.dirichlet(np.ones(5), size=(1, gamma))
        tokens = rng.integers(0, 5, (1, gamma))
        u = rng.random((1, gamma + 1))
        lower = u.copy()
        lower[0, :gamma] *= shrink
        a = verify_sequential(StepInputs(p, q, tokens, u))
        b = verify_sequential(StepInputs(p, q, tokens, lower))
        assert b.accepted_len[0] >= a.accepted_len[0]

    def test_deterministic(self, rng):
        p = rng.dirichlet(np.ones(9), size=(2, 3))
        q = rng.dirichlet(np.ones(9), size=(2, 3))
        inputs = StepInputs(p, q, rng.integers(0, 9, (2, 3)), rng.random((2, 4)))
        a, b = verify_sequential(inputs), verify_sequential(inputs)
        for f in ("accepted_len", "tau", "final_token", "resample_used", "residual_mass"):
            assert np.array_equal(getattr(a, f), getattr(b, f), equal_nan=f != "final_token")


class TestResampleAdjusted:
    def test_point_mass(self):
        for u in (0.0, 0.5, 0.999):
            assert resample_adjusted(P2, Q2, u) == 1

    def test_cdf_boundaries(self):
        # max_norm(p - q) = [0.4, 0.6, 0]
        p = [0.6, 0.6, 0.0]
        q = [0.4, 0.3, 0.3]
        assert resample_adjusted(p, q, 0.39) == 0
        assert resample_adjusted(p, q, 0.41) == 1

    def test_degenerate_falls_back_to_p(self):
        p = [0.25] * 4
        assert resample_adjusted(p, p, 0.6) == 2

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            resample_adjusted([0.5, 0.5], [1.0], 0.1)


def test_distribution_preserved_small_budget():
    p, q = eight_token_fixture()
    rng = np.random.Generator(np.random.Philox(7))
    emitted, result = speculative_first_tokens(p, q, 20_000, rng, backend="reference")
    assert total_variation(np.bincount(emitted, minlength=8), p) < 0.02
    assert abs(np.mean(result.accepted_len) - acceptance_oracle(p, q)) < 0.02
