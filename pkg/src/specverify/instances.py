"""Seeded synthetic verification steps shared by the harness and the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dist import ScaleBounds, sample_inverse_cdf, softmax
from .reference import StepInputs
from .sigmoid import SigmoidStepInputs


@dataclass
class LogitStep:
    """Raw logits for one verification step plus the drafted tokens and uniforms."""

    z_p: np.ndarray
    z_q: np.ndarray
    draft_tokens: np.ndarray
    uniforms: np.ndarray

    def probs(self, validate: bool = False) -> StepInputs:
        return StepInputs(softmax(self.z_p), softmax(self.z_q), self.draft_tokens, self.uniforms,
                          validate=validate)

    def sigmoid(self, bounds: ScaleBounds, half_precision: bool = False) -> SigmoidStepInputs:
        return SigmoidStepInputs(self.z_p, self.z_q, bounds, self.draft_tokens, self.uniforms,
                                 half_precision=half_precision, validate=False)


def _centered(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> np.ndarray:
    # uniform with the requested standard deviation; cheaper to draw than normals
    x = rng.random(shape)
    x -= 0.5
    x *= std * np.sqrt(12.0)
    return x


def synth_step(rng: np.random.Generator, batch: int, gamma: int, vocab_size: int, *,
               bonus: bool = True, logit_scale: float = 3.0, divergence: float = 1.0,
               tie_prob: float = 0.0, offdraft_prob: float = 0.0) -> LogitStep:
    """Random target logits, draft logits perturbed from them, and drafts sampled from q.

    ``tie_prob`` makes a draft row identical to its target row (a degenerate
    residual); ``offdraft_prob`` replaces a drafted token with a uniformly
    random one, which reaches tokens where ``q`` underflows.
    """
    rows = gamma + 1 if bonus else gamma
    z_p = _centered(rng, (batch, rows, vocab_size), logit_scale)
    z_q = z_p[:, :gamma] + _centered(rng, (batch, gamma, vocab_size), divergence)
    if tie_prob > 0:
        tie = rng.random((batch, gamma)) < tie_prob
        z_q[tie] = z_p[:, :gamma][tie]
    tokens = sample_inverse_cdf(softmax(z_q).reshape(-1, vocab_size),
                                rng.random(batch * gamma)).reshape(batch, gamma)
    if offdraft_prob > 0:
        swap = rng.random((batch, gamma)) < offdraft_prob
        tokens[swap] = rng.integers(0, vocab_size, size=int(swap.sum()))
    uniforms = rng.random((batch, gamma + 1))
    return LogitStep(z_p, z_q, tokens, uniforms)
