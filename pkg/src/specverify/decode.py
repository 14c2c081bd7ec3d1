"""Speculative decoding over seeded order-1 toy models.

Randomness protocol: one Philox stream per decode, seeded by
``DecodeConfig.seed``.  Every step draws ``2 * gamma + 1`` uniforms in a single
call, used in this order: the ``gamma`` draft samples, the ``gamma``
acceptance draws, then the resample/bonus draw.  Backends therefore see
identical randomness and their transcripts are directly comparable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dist import ASR_BOUNDS, InvalidInputError, ScaleBounds, sample_inverse_cdf, softmax
from .fused import DEFAULT_TILE, MemoryTrace, plan_tiles, verify_fused
from .reference import StepInputs, VerificationResult, verify_sequential
from .sigmoid import SigmoidStepInputs, verify_sigmoid_fused

BACKENDS = ("reference", "fused", "sigmoid")


def philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


@dataclass
class ToyModel:
    """Order-1 Markov language model: ``table[prev]`` holds next-token logits."""

    vocab_size: int
    table: np.ndarray
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.shape != (self.vocab_size, self.vocab_size):
            raise InvalidInputError(f"table shape {self.table.shape} != ({self.vocab_size},) * 2")
        if not np.isfinite(self.table).all():
            raise InvalidInputError("logit table must be finite")
        if not self.temperature > 0:
            raise InvalidInputError("temperature must be positive")

    def logits(self, contexts) -> np.ndarray:
        return self.table[contexts] / self.temperature

    def probs(self, context: int) -> np.ndarray:
        return softmax(self.logits(context))


def make_model_pair(seed: int, vocab_size: int, divergence: float, *,
                    logit_scale: float = 3.0, temperature: float = 1.0) -> tuple[ToyModel, ToyModel]:
    """Target table ~ N(0, logit_scale^2); draft = target + N(0, divergence^2) noise."""
    if vocab_size < 2:
        raise InvalidInputError("vocab_size must be >= 2")
    if divergence < 0:
        raise InvalidInputError("divergence must be >= 0")
    rng = philox(seed)
    table = rng.normal(0.0, logit_scale, size=(vocab_size, vocab_size))
    draft_table = table.copy()
    if divergence > 0:
        draft_table += rng.normal(0.0, divergence, size=table.shape)
    return (ToyModel(vocab_size, table, temperature, seed),
            ToyModel(vocab_size, draft_table, temperature, seed))


@dataclass(frozen=True)
class GammaState:
    gamma: int = 5
    min_gamma: int = 1
    max_gamma: int = 64

    def __post_init__(self) -> None:
        if not 1 <= self.min_gamma <= self.gamma <= self.max_gamma:
            raise InvalidInputError(f"invalid gamma state {self}")


def gamma_update(state: GammaState, all_accepted: bool) -> GammaState:
    """+2 after a fully accepted step, -1 otherwise, clamped to the bounds."""
    if all_accepted:
        return replace(state, gamma=min(state.gamma + 2, state.max_gamma))
    return replace(state, gamma=max(state.gamma - 1, state.min_gamma))


@dataclass
class DecodeConfig:
    gamma_init: int = 5
    max_gamma: int = 64
    tile_n: int = DEFAULT_TILE
    workers: int = 1
    bounds: ScaleBounds = ASR_BOUNDS
    half_precision: bool = False
    seed: int = 0


@dataclass
class DecodeStats:
    """Per-run counters.

    ``gamma_history`` has ``steps + 1`` entries: the initial draft length and
    the controller state after every step.  ``trials`` lists, for every draft
    position that was actually tested, its context token and the decision.
    """

    tokens_emitted: int = 0
    steps: int = 0
    total_drafted: int = 0
    total_accepted: int = 0
    gamma_history: list[int] = field(default_factory=list)
    accepted_history: list[int] = field(default_factory=list)
    verify_ns: list[int] = field(default_factory=list)
    trials: list[tuple[int, bool]] = field(default_factory=list)
    trace: MemoryTrace = field(default_factory=MemoryTrace)

    @property
    def acceptance_rate(self) -> float:
        """Accepted fraction of tested draft positions."""
        if not self.trials:
            return float("nan")
        return sum(ok for _, ok in self.trials) / len(self.trials)


def verify_step(backend: str, z_p: np.ndarray, z_q: np.ndarray, draft_tokens: np.ndarray,
                uniforms: np.ndarray, config: DecodeConfig) -> tuple[VerificationResult, MemoryTrace | None]:
    """Activation plus verification for one step; logits are ``(B, rows, V)``."""
    if backend == "sigmoid":
        inputs = SigmoidStepInputs(z_p, z_q, config.bounds, draft_tokens, uniforms,
                                   half_precision=config.half_precision, validate=False)
        return verify_sigmoid_fused(inputs, plan_tiles(z_q.shape[-1], config.tile_n), config.workers)
    inputs = StepInputs(softmax(z_p), softmax(z_q), draft_tokens, uniforms, validate=False)
    if backend == "reference":
        return verify_sequential(inputs), None
    if backend == "fused":
        return verify_fused(inputs, plan_tiles(z_q.shape[-1], config.tile_n), config.workers)
    raise InvalidInputError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def decode(target: ToyModel, draft: ToyModel, prompt: list[int], max_len: int,
           backend: str = "reference", config: DecodeConfig | None = None) -> tuple[list[int], DecodeStats]:
    """Generate ``max_len`` new tokens after ``prompt``; returns only the new tokens."""
    config = config or DecodeConfig()
    if backend not in BACKENDS:
        raise InvalidInputError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    if not prompt:
        raise InvalidInputError("prompt must be non-empty")
    if max_len < 1:
        raise InvalidInputError("max_len must be >= 1")
    if target.vocab_size != draft.vocab_size:
        raise InvalidInputError("target and draft vocabularies differ")
    V = target.vocab_size
    if min(prompt) < 0 or max(prompt) >= V:
        raise InvalidInputError("prompt token out of range")

    rng = philox(config.seed)
    state = GammaState(min(config.gamma_init, config.max_gamma), 1, config.max_gamma)
    stats = DecodeStats(gamma_history=[state.gamma])
    out: list[int] = []
    last = int(prompt[-1])
    while len(out) < max_len:
        g = state.gamma
        u = rng.random(2 * g + 1)
        drafts = []
        ctx = last
        for c in range(g):
            ctx = sample_inverse_cdf(draft.probs(ctx), u[c])
            drafts.append(ctx)
        contexts = [last] + drafts
        z_p = target.logits(contexts)[None]
        z_q = draft.logits(contexts[:g])[None]
        tokens = np.asarray(drafts, dtype=np.int64)[None]

        t0 = time.perf_counter_ns()
        result, trace = verify_step(backend, z_p, z_q, tokens, u[g:][None], config)
        stats.verify_ns.append(time.perf_counter_ns() - t0)
        if trace is not None:
            stats.trace.merge(trace)

        n_acc = int(result.accepted_len[0])
        for c in range(min(n_acc + 1, g)):
            stats.trials.append((contexts[c], c < n_acc))
        out.extend(result.emitted(tokens))
        last = out[-1]
        stats.steps += 1
        stats.total_drafted += g
        stats.total_accepted += n_acc
        stats.accepted_history.append(n_acc)
        state = gamma_update(state, n_acc == g)
        stats.gamma_history.append(state.gamma)

    out = out[:max_len]
    stats.tokens_emitted = len(out)
    return out, stats
