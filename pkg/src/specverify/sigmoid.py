"""Sigmoid-approximate verification with the activation fused into the tile pass.

Each task loads raw logits into its scratch buffers, maps them through
``sigma((z - alpha) / (beta - alpha))`` in place and then runs the same tile
math as the exact kernel.  Target and draft probabilities are never
materialized as full tensors.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass

import numpy as np

from .dist import InvalidInputError, ScaleBounds, sigmoid_scaled_values
from .fused import (
    BLOCK_ELEMS,
    MemoryTrace,
    TilePlan,
    _check_plan,
    aggregate,
    plan_tiles,
    row_loader,
    run_tile_kernel,
    scratch_buffers,
)
from .reference import StepInputs, VerificationResult, check_step_shapes, verify_sequential


@dataclass
class SigmoidStepInputs:
    """Logit-level inputs for one step; shapes as in :class:`StepInputs`.

    ``half_precision`` rounds logits, bounds and intermediates to float16,
    emulating models whose logits are produced in half precision.
    """

    z_p: np.ndarray
    z_q: np.ndarray
    bounds: ScaleBounds
    draft_tokens: np.ndarray
    uniforms: np.ndarray
    half_precision: bool = False
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool) -> None:
        self.z_p = np.asarray(self.z_p, dtype=np.float64)
        self.z_q = np.asarray(self.z_q, dtype=np.float64)
        self.draft_tokens = np.asarray(self.draft_tokens, dtype=np.int64)
        self.uniforms = np.asarray(self.uniforms, dtype=np.float64)
        if not isinstance(self.bounds, ScaleBounds):
            raise InvalidInputError("bounds must be a ScaleBounds")
        check_step_shapes(self.z_p, self.z_q, self.draft_tokens, self.uniforms)
        if validate and not (np.isfinite(self.z_p).all() and np.isfinite(self.z_q).all()):
            raise InvalidInputError("logits must be finite")

    @property
    def batch(self) -> int:
        return self.z_q.shape[0]

    @property
    def gamma(self) -> int:
        return self.z_q.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.z_q.shape[2]

    @property
    def has_bonus(self) -> bool:
        return self.z_p.shape[1] == self.gamma + 1


def verify_sigmoid_fused(inputs: SigmoidStepInputs, plan: TilePlan | None = None,
                         workers: int = 1) -> tuple[VerificationResult, MemoryTrace]:
    B, gamma, V = inputs.batch, inputs.gamma, inputs.vocab_size
    plan = plan or plan_tiles(V)
    _check_plan(plan, V)
    bounds, half = inputs.bounds, inputs.half_precision
    rows_per_task = max(1, BLOCK_ELEMS // V)

    def act_p(blk):
        return sigmoid_scaled_values(blk, bounds, half, out=scratch_buffers(rows_per_task, V)[0][:len(blk)])

    def act_q(blk):
        return sigmoid_scaled_values(blk, bounds, half, out=scratch_buffers(rows_per_task, V)[1][:len(blk)])

    load = row_loader(inputs.z_p, gamma, act_p, inputs.z_q.reshape(B * gamma, V), act_q)
    out = run_tile_kernel(load, B * gamma, inputs.draft_tokens.reshape(-1), plan, workers)
    result = aggregate(out, B, gamma, inputs.uniforms,
                       lambda b, c: sigmoid_scaled_values(inputs.z_p[b, c], bounds, half),
                       inputs.has_bonus)
    return result, out.trace


def materialize(inputs: SigmoidStepInputs) -> StepInputs:
    """Full sigmoid tensors packaged for the sequential verifier."""
    p_hat = sigmoid_scaled_values(inputs.z_p, inputs.bounds, inputs.half_precision)
    q_hat = sigmoid_scaled_values(inputs.z_q, inputs.bounds, inputs.half_precision)
    return StepInputs(p_hat, q_hat, inputs.draft_tokens, inputs.uniforms, normalized=False)


def verify_sigmoid_sequential(inputs: SigmoidStepInputs) -> VerificationResult:
    """Oracle for the sigmoid backend: materialize, then verify sequentially."""
    return verify_sequential(materialize(inputs))
