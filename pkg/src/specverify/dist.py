"""Distribution primitives shared by every verification backend.

All functions operate along the last axis, so a single row and a stack of
rows (``B x gamma x V``) go through the same numeric pathway.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPS = 1e-12

# Sampled token reported when every draft was accepted and no bonus row was
# supplied.
NO_BONUS = -1


class InvalidInputError(ValueError):
    """Raised when an input violates a documented precondition."""


@dataclass(frozen=True)
class ScaleBounds:
    """Affine logit bounds used by the sigmoid approximation.

    Logits are mapped to ``(z - alpha) / (beta - alpha)`` before the sigmoid.
    """

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise InvalidInputError(f"bounds must be finite, got {self}")
        if not self.alpha < 0 < self.beta:
            raise InvalidInputError(
                f"bounds need alpha < 0 < beta, got alpha={self.alpha}, beta={self.beta}"
            )

    @property
    def width(self) -> float:
        return self.beta - self.alpha

    @classmethod
    def symmetric(cls, scale: float) -> ScaleBounds:
        return cls(-float(scale), float(scale))


ASR_BOUNDS = ScaleBounds(-1e3, 1e3)
TEXT_BOUNDS = ScaleBounds(-1e4, 1e4)


@dataclass(frozen=True, eq=False)
class ProbRow:
    """Probability values along the last axis of ``values``.

    ``normalized`` is False for sigmoid outputs, which do not sum to one.
    ``degenerate`` marks a ``max_norm`` result whose denominator vanished.
    """

    values: np.ndarray
    normalized: bool = True
    degenerate: bool = False

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self) -> int:
        return self.values.shape[-1]


def _as_logits(row) -> np.ndarray:
    z = np.asarray(row, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise InvalidInputError("logit row must be non-empty")
    return z


def softmax(z: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis; returns a new array."""
    z = _as_logits(z)
    top = z.max(axis=-1, keepdims=True)
    if not (np.isfinite(top).all() and np.isfinite(z.min())):
        raise InvalidInputError("softmax input must be finite")
    e = z - top
    np.exp(e, out=e)
    e /= e.sum(axis=-1, keepdims=True)
    return e


def stable_softmax(row) -> ProbRow:
    return ProbRow(softmax(row))


def sigmoid_(t: np.ndarray) -> np.ndarray:
    """Overwrite ``t`` with the logistic sigmoid of its entries."""
    np.negative(t, out=t)
    return _sigmoid_of_negated(t)


def _sigmoid_of_negated(s: np.ndarray) -> np.ndarray:
    """Overwrite ``s = -t`` with ``sigma(t)``.

    Uses ``1 / (1 + exp(-t))`` where ``t >= 0`` and ``e / (1 + e)`` with
    ``e = exp(t)`` where ``t < 0``, so no exponent ever exceeds zero.  Each
    element gets the same bits whichever branch covers its block.
    """
    if s.size and s.max() <= 0:
        np.exp(s, out=s)
        s += 1.0
        np.reciprocal(s, out=s)
        return s
    e = np.abs(s)
    np.negative(e, out=e)
    np.exp(e, out=e)
    num = np.where(s <= 0, 1.0, e)
    e += 1.0
    np.divide(num, e, out=s)
    return s


def _scale_factor(bounds: ScaleBounds) -> float:
    return 1.0 / bounds.width


def scaled_logits(z: np.ndarray, bounds: ScaleBounds, half_precision: bool = False,
                  out: np.ndarray | None = None) -> np.ndarray:
    """``(z - alpha) / (beta - alpha)`` in float64, or in emulated float16.

    The float64 path multiplies by the reciprocal width.  The float16 path
    rounds the logits, the bounds and every intermediate to half precision,
    which is where bounds of magnitude 1e5 overflow.
    """
    if half_precision:
        with np.errstate(over="ignore", invalid="ignore"):
            z16 = np.asarray(z).astype(np.float16)
            lo, hi = np.float16(bounds.alpha), np.float16(bounds.beta)
            t16 = (z16 - lo) / (hi - lo)
        if out is None:
            return t16.astype(np.float64)
        out[...] = t16
        return out
    t = np.subtract(z, bounds.alpha, out=out)
    t *= _scale_factor(bounds)
    return t


def sigmoid_scaled_values(z, bounds: ScaleBounds, half_precision: bool = False,
                          out: np.ndarray | None = None) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if half_precision:
        t = scaled_logits(z, bounds, True, out=out)
        with np.errstate(invalid="ignore"):
            sigmoid_(t)
        t[...] = t.astype(np.float16)
        return t
    # alpha - z is exactly -(z - alpha), so this is -t bit for bit
    s = np.subtract(bounds.alpha, z, out=out)
    s *= _scale_factor(bounds)
    return _sigmoid_of_negated(s)


def sigmoid_scaled(row, bounds: ScaleBounds, half_precision: bool = False) -> ProbRow:
    """Element-wise ``sigma((z - alpha) / (beta - alpha))``; not normalized."""
    z = _as_logits(row)
    if not half_precision and not np.isfinite(z).all():
        raise InvalidInputError("sigmoid input must be finite")
    return ProbRow(sigmoid_scaled_values(z, bounds, half_precision), normalized=False)


def max_norm(f) -> tuple[ProbRow, float]:
    """Clamp negatives to zero and renormalize.

    Returns the row together with its denominator.  When the denominator is
    at most ``EPS`` the row is returned unnormalized and flagged degenerate;
    the caller decides on a fallback.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1 or f.size == 0:
        raise InvalidInputError("max_norm expects a non-empty vector")
    if not np.isfinite(f).all():
        raise InvalidInputError("max_norm input must be finite")
    a = np.maximum(f, 0.0)
    denom = math.fsum(a.tolist())
    if denom <= EPS:
        return ProbRow(a, normalized=False, degenerate=True), denom
    return ProbRow(a / denom), denom


def ratio_clamped(p: float, q: float) -> float:
    """``min(1, p / q)`` with the convention ``q <= EPS -> 1 if p > EPS else 0``."""
    if not (p >= 0 and q >= 0):
        raise InvalidInputError(f"ratio inputs must be non-negative, got p={p}, q={q}")
    if q <= EPS:
        return 1.0 if p > EPS else 0.0
    r = p / q
    return r if r < 1.0 else 1.0


def ratio_clamped_array(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Vectorized ``ratio_clamped``; NaNs propagate instead of raising."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r = np.minimum(p / q, 1.0)
    tiny = q <= EPS
    if tiny.any():
        r = np.where(tiny, np.where(p > EPS, 1.0, 0.0), r)
    return r


def sample_inverse_cdf(probs: np.ndarray, u: np.ndarray | float) -> np.ndarray | int:
    """Inverse-CDF sampling over the last axis, scanning indices upward.

    ``probs`` rows are assumed normalized.  The token is the first index whose
    running sum exceeds ``u``; if rounding leaves ``u`` above the final sum,
    the last index with positive mass is used.
    """
    probs = np.asarray(probs, dtype=np.float64)
    scalar = probs.ndim == 1
    p2 = probs.reshape(-1, probs.shape[-1])
    u2 = np.asarray(u, dtype=np.float64).reshape(-1, 1)
    cdf = np.cumsum(p2, axis=1)
    idx = np.count_nonzero(cdf <= u2, axis=1)
    over = idx >= p2.shape[1]
    if over.any():
        for i in np.flatnonzero(over):
            pos = np.flatnonzero(p2[i] > 0)
            idx[i] = pos[-1] if pos.size else p2.shape[1] - 1
    return int(idx[0]) if scalar else idx


def uniform_token(u: float, vocab_size: int) -> int:
    """Fallback token when no weight vector carries usable mass."""
    return min(int(u * vocab_size), vocab_size - 1)
