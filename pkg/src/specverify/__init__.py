"""Speculative-sampling verification with sequential, fused and sigmoid backends."""

from .decode import BACKENDS, DecodeConfig, DecodeStats, GammaState, ToyModel, decode, gamma_update, make_model_pair
from .dist import (
    ASR_BOUNDS,
    EPS,
    NO_BONUS,
    TEXT_BOUNDS,
    InvalidInputError,
    ProbRow,
    ScaleBounds,
    max_norm,
    ratio_clamped,
    sigmoid_scaled,
    stable_softmax,
)
from .fused import MemoryTrace, TilePartial, TilePlan, kernel_tile_pass, plan_tiles, verify_fused
from .reference import StepInputs, VerificationResult, resample_adjusted, verify_sequential
from .sigmoid import SigmoidStepInputs, verify_sigmoid_fused, verify_sigmoid_sequential

__version__ = "0.1.0"

__all__ = [
    "ASR_BOUNDS", "BACKENDS", "EPS", "NO_BONUS", "TEXT_BOUNDS",
    "DecodeConfig", "DecodeStats", "GammaState", "InvalidInputError", "MemoryTrace", "ProbRow",
    "ScaleBounds", "SigmoidStepInputs", "StepInputs", "TilePartial", "TilePlan", "ToyModel",
    "VerificationResult", "decode", "gamma_update", "kernel_tile_pass", "make_model_pair", "max_norm",
    "plan_tiles", "ratio_clamped", "resample_adjusted", "sigmoid_scaled", "stable_softmax",
    "verify_fused", "verify_sequential", "verify_sigmoid_fused", "verify_sigmoid_sequential",
]
