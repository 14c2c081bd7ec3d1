"""Sequential speculative verification, used as the oracle for fused backends.

Everything here is plain scalar Python scanning the vocabulary in ascending
order.  It is slow on purpose: it shares no vectorized code path with the
kernels it checks.
"""

from __future__ import annotations

import math
from dataclasses import InitVar, dataclass

import numpy as np

from .dist import EPS, NO_BONUS, InvalidInputError, max_norm, ratio_clamped, uniform_token

SUM_TOL = 1e-9


@dataclass
class StepInputs:
    """One verification step for a batch of ``B`` draft sequences.

    Attributes:
        p: Target probabilities, shape ``(B, gamma, V)`` or ``(B, gamma + 1, V)``.
            The optional extra row is the bonus position scored after the
            last draft token.
        q: Draft probabilities, shape ``(B, gamma, V)``.
        draft_tokens: Drafted token ids, shape ``(B, gamma)``.
        uniforms: Uniform draws in ``[0, 1)``, shape ``(B, gamma + 1)``.  Column
            ``c`` is the acceptance draw for draft ``c``; the last column drives
            the resample or bonus sample.
        normalized: False when ``p``/``q`` come from the sigmoid approximation
            and are exempt from the sum-to-one check.
    """

    p: np.ndarray
    q: np.ndarray
    draft_tokens: np.ndarray
    uniforms: np.ndarray
    normalized: bool = True
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool) -> None:
        self.p = np.asarray(self.p, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        self.draft_tokens = np.asarray(self.draft_tokens, dtype=np.int64)
        self.uniforms = np.asarray(self.uniforms, dtype=np.float64)
        check_step_shapes(self.p, self.q, self.draft_tokens, self.uniforms)
        if validate:
            self._check_values()

    def _check_values(self) -> None:
        for name, t in (("p", self.p), ("q", self.q)):
            if not np.isfinite(t).all() or t.min() < 0 or t.max() > 1:
                raise InvalidInputError(f"{name} entries must lie in [0, 1]")
            if self.normalized:
                dev = np.abs(t.sum(axis=-1) - 1.0).max()
                if dev > SUM_TOL:
                    raise InvalidInputError(f"{name} rows must sum to 1 (max deviation {dev:.3g})")

    @property
    def batch(self) -> int:
        return self.q.shape[0]

    @property
    def gamma(self) -> int:
        return self.q.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.q.shape[2]

    @property
    def has_bonus(self) -> bool:
        return self.p.shape[1] == self.gamma + 1


def check_step_shapes(p, q, draft_tokens, uniforms) -> None:
    if q.ndim != 3 or p.ndim != 3:
        raise InvalidInputError(f"p and q must be 3-d, got {p.shape} and {q.shape}")
    B, gamma, V = q.shape
    if gamma < 1 or V < 1 or B < 1:
        raise InvalidInputError(f"empty q tensor {q.shape}")
    if p.shape[0] != B or p.shape[2] != V or p.shape[1] not in (gamma, gamma + 1):
        raise InvalidInputError(f"p shape {p.shape} incompatible with q shape {q.shape}")
    if draft_tokens.shape != (B, gamma):
        raise InvalidInputError(f"draft_tokens shape {draft_tokens.shape} != {(B, gamma)}")
    if uniforms.shape != (B, gamma + 1):
        raise InvalidInputError(f"uniforms shape {uniforms.shape} != {(B, gamma + 1)}")
    if draft_tokens.min() < 0 or draft_tokens.max() >= V:
        raise InvalidInputError("draft token out of vocabulary range")
    if not (uniforms.min() >= 0 and uniforms.max() < 1):
        raise InvalidInputError("uniforms must lie in [0, 1)")


@dataclass
class VerificationResult:
    """Outcome of verifying one step for each batch row.

    ``residual_mass`` holds the max_norm denominator of the rejected position
    (NaN when nothing was rejected).  ``final_token`` is the resampled token,
    the bonus token, or ``NO_BONUS``.
    """

    accepted_len: np.ndarray
    tau: np.ndarray
    final_token: np.ndarray
    resample_used: np.ndarray
    residual_mass: np.ndarray

    def emitted(self, draft_tokens: np.ndarray, row: int = 0) -> list[int]:
        """Tokens appended to sequence ``row``: accepted prefix plus final token."""
        n = int(self.accepted_len[row])
        out = [int(t) for t in draft_tokens[row, :n]]
        if self.final_token[row] != NO_BONUS:
            out.append(int(self.final_token[row]))
        return out


def _inverse_cdf_scan(probs: list[float], u: float) -> int:
    running = 0.0
    for i, v in enumerate(probs):
        running += v
        if u < running:
            return i
    for i in range(len(probs) - 1, -1, -1):
        if probs[i] > 0:
            return i
    return len(probs) - 1


def _sample_weights(weights: list[float], u: float) -> int:
    total = math.fsum(weights)
    if not total > EPS:
        return uniform_token(u, len(weights))
    return _inverse_cdf_scan([w / total for w in weights], u)


def _resample(p_row: list[float], q_row: list[float], u: float) -> tuple[int, float]:
    adjusted, denom = max_norm([pi - qi for pi, qi in zip(p_row, q_row)])
    if adjusted.degenerate:
        return _sample_weights(p_row, u), denom
    return _inverse_cdf_scan(adjusted.values.tolist(), u), denom


def resample_adjusted(p_row, q_row, u: float) -> int:
    """Draw from ``max_norm(p - q)`` by inverse CDF; falls back to ``p`` when degenerate."""
    p_row = np.asarray(p_row, dtype=np.float64).tolist()
    q_row = np.asarray(q_row, dtype=np.float64).tolist()
    if len(p_row) != len(q_row):
        raise InvalidInputError("p and q rows differ in length")
    return _resample(p_row, q_row, u)[0]


def verify_sequential(inputs: StepInputs) -> VerificationResult:
    B, gamma = inputs.batch, inputs.gamma
    tokens = inputs.draft_tokens.tolist()
    uniforms = inputs.uniforms.tolist()
    accepted_len = np.zeros(B, dtype=np.int64)
    tau = np.zeros((B, gamma))
    final = np.full(B, NO_BONUS, dtype=np.int64)
    resampled = np.zeros(B, dtype=bool)
    mass = np.full(B, np.nan)

    for b in range(B):
        p, q, u = inputs.p[b], inputs.q[b], uniforms[b]
        rejected_at = None
        for c in range(gamma):
            x = tokens[b][c]
            tau[b, c] = t = ratio_clamped(float(p[c, x]), float(q[c, x]))
            if rejected_at is None:
                if u[c] <= t:
                    accepted_len[b] += 1
                else:
                    rejected_at = c
        if rejected_at is not None:
            final[b], mass[b] = _resample(p[rejected_at].tolist(), q[rejected_at].tolist(), u[gamma])
            resampled[b] = True
        elif inputs.has_bonus:
            final[b] = _sample_weights(p[gamma].tolist(), u[gamma])
    return VerificationResult(accepted_len, tau, final, resampled, mass)
