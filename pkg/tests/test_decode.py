from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from specverify.decode import (
    DecodeConfig,
    GammaState,
    ToyModel,
    decode,
    gamma_update,
    make_model_pair,
)
from specverify.dist import InvalidInputError, ScaleBounds
from specverify.validation import replay_gamma, total_variation


class TestModels:
    def test_zero_divergence_is_identical(self):
        t, d = make_model_pair(3, 32, 0.0)
        assert np.array_equal(t.table, d.table)

    def test_seeded(self):
        a, _ = make_model_pair(5, 16, 1.0)
        b, _ = make_model_pair(5, 16, 1.0)
        c, _ = make_model_pair(6, 16, 1.0)
        assert np.array_equal(a.table, b.table) and not np.array_equal(a.table, c.table)

    def test_perturbation_scale(self):
        t, d = make_model_pair(0, 200, 2.0)
        assert np.std(d.table - t.table) == pytest.approx(2.0, rel=0.02)

    @pytest.mark.parametrize("kwargs", [{"vocab_size": 1}, {"divergence": -1.0}])
    def test_invalid(self, kwargs):
        args = {"seed": 0, "vocab_size": 8, "divergence": 0.5} | kwargs
        with pytest.raises(InvalidInputError):
            make_model_pair(**args)

    def test_toy_model_checks(self):
        with pytest.raises(InvalidInputError):
            ToyModel(3, np.zeros((3, 2)))
        with pytest.raises(InvalidInputError):
            ToyModel(2, np.zeros((2, 2)), temperature=0.0)


class TestGammaUpdate:
    def test_values(self):
        assert gamma_update(GammaState(5), True).gamma == 7
        assert gamma_update(GammaState(5), False).gamma == 4
        assert gamma_update(GammaState(1), False).gamma == 1
        assert gamma_update(GammaState(63), True).gamma == 64

    def test_invalid_state(self):
        with pytest.raises(InvalidInputError):
            GammaState(0)
        with pytest.raises(InvalidInputError):
            GammaState(70)

    @given(st.integers(1, 64), st.booleans())
    def test_stays_in_bounds(self, g, ok):
        s = gamma_update(GammaState(g), ok)
        assert 1 <= s.gamma <= 64
        assert s.gamma == (min(g + 2, 64) if ok else max(g - 1, 1))


class TestDecode:
    def test_all_accept_trajectory(self):
        t, d = make_model_pair(0, 16, 0.0)
        toks, st_ = decode(t, d, [0], 12, "reference")
        assert st_.gamma_history[:3] == [5, 7, 9]
        assert st_.acceptance_rate == 1.0
        assert all(a == g for a, g in zip(st_.accepted_history, st_.gamma_history))
        assert len(toks) == 12

    def test_single_token(self):
        t, d = make_model_pair(1, 16, 3.0)
        toks, st_ = decode(t, d, [2], 1, "fused")
        assert st_.steps == 1 and len(toks) == 1 and st_.tokens_emitted >= 1

    def test_stats_invariants(self):
        t, d = make_model_pair(2, 32, 2.0)
        toks, st_ = decode(t, d, [0], 200, "fused")
        assert st_.total_accepted <= st_.total_drafted
        assert st_.tokens_emitted >= st_.steps
        assert len(st_.verify_ns) == st_.steps and all(ns > 0 for ns in st_.verify_ns)
        assert len(st_.gamma_history) == st_.steps + 1
        assert replay_gamma(st_.gamma_history, st_.accepted_history) == []
        assert st_.trace.hbm_elem_reads_p == st_.total_drafted * 32

    @pytest.mark.parametrize("kwargs", [
        {"backend": "gpu"}, {"prompt": []}, {"max_len": 0}, {"prompt": [99]},
    ])
    def test_invalid(self, kwargs):
        t, d = make_model_pair(0, 8, 1.0)
        args = {"target": t, "draft": d, "prompt": [0], "max_len": 4, "backend": "fused"} | kwargs
        with pytest.raises(InvalidInputError):
            decode(**args)

    def test_vocab_mismatch(self):
        t, _ = make_model_pair(0, 8, 1.0)
        _, d = make_model_pair(0, 9, 1.0)
        with pytest.raises(InvalidInputError):
            decode(t, d, [0], 3)

    @pytest.mark.parametrize("V", [16, 257])
    @pytest.mark.parametrize("divergence", [0.0, 1.0, 5.0])
    def test_reference_and_fused_transcripts_agree(self, V, divergence):
        for seed in range(100):
            t, d = make_model_pair(seed, V, divergence)
            cfg = DecodeConfig(seed=seed, tile_n=(4, 64)[seed % 2])
            a, sa = decode(t, d, [seed % V], 16, "reference", cfg)
            b, sb = decode(t, d, [seed % V], 16, "fused", cfg)
            assert a == b, seed
            assert sa.gamma_history == sb.gamma_history

    @pytest.mark.parametrize("half", [False, True])
    @pytest.mark.parametrize("scale", [1e1, 1e3, 1e5])
    def test_sigmoid_terminates_with_valid_tokens(self, half, scale):
        for seed in range(10):
            t, d = make_model_pair(seed, 32, 2.0)
            cfg = DecodeConfig(seed=seed, bounds=ScaleBounds.symmetric(scale), half_precision=half)
            toks, st_ = decode(t, d, [0], 30, "sigmoid", cfg)
            assert len(toks) == 30 and all(0 <= x < 32 for x in toks)
            assert replay_gamma(st_.gamma_history, st_.accepted_history) == []


def test_acceptance_matches_per_context_oracle():
    target, draft = make_model_pair(0, 64, 5.0)
    _, st_ = decode(target, draft, [0], 14_000, "fused", DecodeConfig(seed=0))
    assert st_.steps >= 10_000
    oracle = {c: math.fsum(np.minimum(target.probs(c), draft.probs(c))) for c in range(64)}
    expected = np.mean([oracle[c] for c, _ in st_.trials])
    assert abs(st_.acceptance_rate - expected) < 0.01


@pytest.mark.slow
@pytest.mark.parametrize("backend", ["reference", "fused"])
def test_end_to_end_distribution_frozen_context(backend):
    # every row of both tables is identical, so the context never matters
    rng = np.random.Generator(np.random.Philox(21))
    z = rng.normal(0, 1.5, 8)
    target = ToyModel(8, np.tile(z, (8, 1)))
    draft = ToyModel(8, np.tile(z + rng.normal(0, 1.0, 8), (8, 1)))
    cfg = DecodeConfig(gamma_init=1, max_gamma=1, seed=5)
    toks, st_ = decode(target, draft, [0], 100_000, backend, cfg)
    assert set(st_.gamma_history) == {1}
    assert total_variation(np.bincount(toks, minlength=8), target.probs(0)) < 0.01
