"""Scale-bounds ablation for the sigmoid backend.

For each ``(alpha, beta)`` the sigmoid backend decodes a fixed set of seeded
prompts; the transcripts are compared with the exact fused backend on the
same seeds by normalized edit distance.  Every point is run twice, once at
full precision and once with float16 emulation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .decode import DecodeConfig, decode, make_model_pair
from .dist import ASR_BOUNDS, TEXT_BOUNDS, InvalidInputError, ScaleBounds

DEFAULT_SCALES = (1e1, 1e3, 1e4, 1e5, 1e9)

ABLATION_COLUMNS = (
    "profile", "alpha", "beta", "acceptance_rate", "mean_verify_ns", "divergence",
    "acceptance_rate_half", "mean_verify_ns_half", "divergence_half", "seeds", "max_len",
)


@dataclass(frozen=True)
class TaskProfile:
    """Toy stand-in for a task family.

    ``logit_scale`` sets how peaked the target is: the "asr" profile is nearly
    deterministic, like transcription, while "text" is flatter.
    """

    name: str
    bounds: ScaleBounds
    vocab_size: int = 64
    logit_scale: float = 3.0
    divergence: float = 1.0
    max_len: int = 64
    seeds: tuple[int, ...] = tuple(range(8))


PROFILES = {
    "asr": TaskProfile("asr", ASR_BOUNDS, logit_scale=30.0, divergence=1.0),
    "text": TaskProfile("text", TEXT_BOUNDS, logit_scale=3.0, divergence=1.0),
}


@dataclass
class AblationRow:
    profile: str
    alpha: float
    beta: float
    acceptance_rate: float
    mean_verify_ns: float
    divergence: float
    acceptance_rate_half: float
    mean_verify_ns_half: float
    divergence_half: float
    seeds: int
    max_len: int

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ABLATION_COLUMNS}


def edit_distance(a, b) -> int:
    """Levenshtein distance with unit costs."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def normalized_edit_distance(a, b) -> float:
    n = max(len(a), len(b))
    return edit_distance(a, b) / n if n else 0.0


def _run(profile: TaskProfile, backend: str, config: DecodeConfig):
    transcripts, trials, accepted, verify_ns = [], 0, 0, []
    for seed in profile.seeds:
        target, draft = make_model_pair(seed, profile.vocab_size, profile.divergence,
                                        logit_scale=profile.logit_scale)
        toks, st = decode(target, draft, [0], profile.max_len, backend, replace(config, seed=seed))
        transcripts.append(toks)
        trials += len(st.trials)
        accepted += sum(ok for _, ok in st.trials)
        verify_ns.extend(st.verify_ns)
    return transcripts, accepted / trials if trials else float("nan"), float(np.mean(verify_ns))


def ablate_scale(grid, profile: TaskProfile | str = "text", base: DecodeConfig | None = None) -> list[AblationRow]:
    """One row per bounds in ``grid`` (``ScaleBounds`` or symmetric magnitudes)."""
    if isinstance(profile, str):
        if profile not in PROFILES:
            raise InvalidInputError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
        profile = PROFILES[profile]
    grid = [b if isinstance(b, ScaleBounds) else ScaleBounds.symmetric(b) for b in grid]
    if not grid:
        raise InvalidInputError("bounds grid must be non-empty")
    base = base or DecodeConfig()
    exact, _, _ = _run(profile, "fused", base)
    rows = []
    for bounds in grid:
        stats = {}
        for half in (False, True):
            cfg = replace(base, bounds=bounds, half_precision=half)
            sig, rate, ns = _run(profile, "sigmoid", cfg)
            div = float(np.mean([normalized_edit_distance(s, e) for s, e in zip(sig, exact)]))
            stats[half] = (rate, ns, div)
        rows.append(AblationRow(profile.name, bounds.alpha, bounds.beta, *stats[False], *stats[True],
                                len(profile.seeds), profile.max_len))
    return rows
