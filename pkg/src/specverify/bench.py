"""Benchmark runner: interleaved timing of the backends over a seeded grid.

Each grid point is one ``(vocab_size, gamma, bounds, workers, seed)`` tuple and
yields one report row per backend.  Timed columns:

* ``median_ns``/``mean_ns``/``std_ns``: verify plus activation, from logits to
  tokens.  The exact backends pay for softmax here; the sigmoid backend fuses
  its activation.  This is the headline statistic.
* ``verify_only_median_ns``: the exact backends starting from probabilities.
  The sigmoid backend has no separable activation, so its value repeats the
  headline.
* ``scoring_median_ns``: synthesis of the step's logits and draft tokens,
  standing in for model scoring; ``wall_median_ns`` adds it to the headline.

Backends are timed round-robin inside a grid point so drifts in machine state
hit all of them alike.  Peak resident memory is measured in a fresh child
process per backend and grid point.
"""

from __future__ import annotations

import csv
import json
import os
import statistics
import subprocess
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .decode import BACKENDS, DecodeConfig, verify_step
from .dist import ASR_BOUNDS, InvalidInputError, ScaleBounds
from .fused import DEFAULT_TILE, plan_tiles, verify_fused
from .instances import LogitStep, synth_step
from .reference import verify_sequential
from .validation import instance_rng

FORMATS = ("csv", "jsonl")

REPORT_COLUMNS = (
    "backend", "vocab_size", "gamma", "batch", "tile_n", "alpha", "beta", "workers", "seed",
    "iterations", "warmup",
    "median_ns", "mean_ns", "std_ns", "verify_only_median_ns", "scoring_median_ns", "wall_median_ns",
    "rel_improvement_pct", "acceptance_rate", "accepted_len",
    "hbm_elem_reads_p", "hbm_elem_reads_q", "hbm_elem_reads_aggregate", "hbm_elem_writes",
    "peak_tile_bytes", "kernel_invocations", "peak_rss_bytes",
)


@dataclass
class BenchConfig:
    """Grid and measurement settings for :func:`run_bench`.

    Attributes:
        backends: Backends to time; relative improvement needs ``reference``.
        vocab_sizes: Vocabulary sizes of the grid.
        gammas: Draft lengths of the grid.
        tile_n: Tile width for the fused backends.
        bounds: Sigmoid scale bounds of the grid (ignored by exact backends).
        seeds: Input seeds; each grid point is replayable from its seed.
        iterations: Timed iterations per grid point (at least 30 for headline use).
        warmup: Untimed iterations before timing.
        workers: Worker counts of the grid.
        batch: Batch rows per step.
        logit_scale: Standard deviation of synthetic target logits.
        divergence: Standard deviation of the draft perturbation.
        half_precision: Emulated float16 logits for the sigmoid backend.
        measure_memory: Spawn one child per backend and grid point for peak RSS.
        out: Optional report path.
        fmt: ``csv`` or ``jsonl``.
    """

    backends: tuple[str, ...] = BACKENDS
    vocab_sizes: tuple[int, ...] = (32768,)
    gammas: tuple[int, ...] = tuple(range(1, 21))
    tile_n: int = DEFAULT_TILE
    bounds: tuple[ScaleBounds, ...] = (ASR_BOUNDS,)
    seeds: tuple[int, ...] = (0,)
    iterations: int = 30
    warmup: int = 3
    workers: tuple[int, ...] = (1,)
    batch: int = 1
    logit_scale: float = 3.0
    divergence: float = 0.3
    half_precision: bool = False
    measure_memory: bool = True
    out: str | None = None
    fmt: str = "csv"

    def __post_init__(self) -> None:
        for name in ("backends", "vocab_sizes", "gammas", "bounds", "seeds", "workers"):
            if not getattr(self, name):
                raise InvalidInputError(f"{name} must be non-empty")
        unknown = set(self.backends) - set(BACKENDS)
        if unknown:
            raise InvalidInputError(f"unknown backends {sorted(unknown)}")
        ints = {"vocab_sizes": self.vocab_sizes, "gammas": self.gammas, "workers": self.workers,
                "tile_n": (self.tile_n,), "iterations": (self.iterations,), "batch": (self.batch,)}
        for name, vals in ints.items():
            if min(vals) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if self.warmup < 0:
            raise InvalidInputError("warmup must be >= 0")
        if self.fmt not in FORMATS:
            raise InvalidInputError(f"format must be one of {FORMATS}")


@dataclass
class BenchReport:
    rows: list[dict] = field(default_factory=list)

    def by_backend(self, backend: str) -> list[dict]:
        return [r for r in self.rows if r["backend"] == backend]


def grid_points(config: BenchConfig):
    for V in config.vocab_sizes:
        for gamma in config.gammas:
            for bounds in config.bounds:
                for workers in config.workers:
                    for seed in config.seeds:
                        yield V, gamma, bounds, workers, seed


def step_inputs(seed: int, batch: int, gamma: int, V: int, logit_scale: float, divergence: float) -> LogitStep:
    """Deterministic inputs of a grid point; the bonus row is always scored."""
    return synth_step(instance_rng(seed, gamma), batch, gamma, V,
                      logit_scale=logit_scale, divergence=divergence)


def _decode_config(config: BenchConfig, bounds: ScaleBounds, workers: int) -> DecodeConfig:
    return DecodeConfig(tile_n=config.tile_n, workers=workers, bounds=bounds,
                        half_precision=config.half_precision)


def _verify_only(backend: str, probs, plan, workers: int):
    if backend == "reference":
        return verify_sequential(probs)
    return verify_fused(probs, plan, workers)


def _time_point(config: BenchConfig, V: int, gamma: int, bounds: ScaleBounds, workers: int, seed: int):
    dcfg = _decode_config(config, bounds, workers)
    plan = plan_tiles(V, config.tile_n)
    step = step_inputs(seed, config.batch, gamma, V, config.logit_scale, config.divergence)
    probs = step.probs()
    timed = {b: [] for b in config.backends}
    only = {b: [] for b in config.backends if b != "sigmoid"}
    scoring = []
    outcome = {}
    for it in range(config.warmup + config.iterations):
        keep = it >= config.warmup
        t0 = time.perf_counter_ns()
        step_inputs(seed, config.batch, gamma, V, config.logit_scale, config.divergence)
        if keep:
            scoring.append(time.perf_counter_ns() - t0)
        for b in config.backends:
            t0 = time.perf_counter_ns()
            result, trace = verify_step(b, step.z_p, step.z_q, step.draft_tokens, step.uniforms, dcfg)
            dt = time.perf_counter_ns() - t0
            if b in only:
                t1 = time.perf_counter_ns()
                _verify_only(b, probs, plan, workers)
                dt_only = time.perf_counter_ns() - t1
            if keep:
                timed[b].append(dt)
                if b in only:
                    only[b].append(dt_only)
            outcome[b] = (result, trace)
    return timed, only, scoring, outcome


def _row(config, backend, V, gamma, bounds, workers, seed, timed, only, scoring, outcome) -> dict:
    result, trace = outcome[backend]
    t = timed[backend]
    med = statistics.median(t)
    row = {
        "backend": backend, "vocab_size": V, "gamma": gamma, "batch": config.batch,
        "tile_n": config.tile_n, "alpha": bounds.alpha, "beta": bounds.beta, "workers": workers,
        "seed": seed, "iterations": config.iterations, "warmup": config.warmup,
        "median_ns": med, "mean_ns": statistics.fmean(t),
        "std_ns": statistics.stdev(t) if len(t) > 1 else 0.0,
        "verify_only_median_ns": statistics.median(only[backend]) if backend in only else med,
        "scoring_median_ns": statistics.median(scoring),
        "wall_median_ns": statistics.median(scoring) + med,
        "rel_improvement_pct": None,
        "acceptance_rate": float(np.mean(result.accepted_len / gamma)),
        "accepted_len": int(result.accepted_len.sum()),
        "peak_rss_bytes": None,
    }
    for k in ("hbm_elem_reads_p", "hbm_elem_reads_q", "hbm_elem_reads_aggregate", "hbm_elem_writes",
              "peak_tile_bytes", "kernel_invocations"):
        row[k] = getattr(trace, k) if trace is not None else None
    return row


def relative_improvement(t_ref: float, t_opt: float) -> float:
    """``(t_ref - t_opt) / t_ref`` as a percentage."""
    return 100.0 * (t_ref - t_opt) / t_ref


def peak_rss(backend: str, seed: int, batch: int, gamma: int, V: int, logit_scale: float,
             divergence: float, dcfg: DecodeConfig, repeats: int = 3) -> int:
    """Peak resident bytes of a fresh process that synthesizes the inputs and runs the backend."""
    spec = {"backend": backend, "seed": seed, "batch": batch, "gamma": gamma, "vocab_size": V,
            "logit_scale": logit_scale, "divergence": divergence, "tile_n": dcfg.tile_n,
            "workers": dcfg.workers, "alpha": dcfg.bounds.alpha, "beta": dcfg.bounds.beta,
            "half_precision": dcfg.half_precision, "repeats": repeats}
    proc = subprocess.run([sys.executable, "-m", "specverify.memprobe", json.dumps(spec)],
                          capture_output=True, text=True, check=False)
    if proc.returncode != 0:
        raise RuntimeError(f"memory probe for {backend} failed: {proc.stderr.strip()[-500:]}")
    return int(proc.stdout.strip().splitlines()[-1])


def _check_writable(path: str) -> None:
    try:
        with open(path, "a", encoding="utf-8"):
            pass
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror or exc}") from exc


def run_bench(config: BenchConfig) -> BenchReport:
    if config.out:
        _check_writable(config.out)
    report = BenchReport()
    for V, gamma, bounds, workers, seed in grid_points(config):
        timed, only, scoring, outcome = _time_point(config, V, gamma, bounds, workers, seed)
        rows = [_row(config, b, V, gamma, bounds, workers, seed, timed, only, scoring, outcome)
                for b in config.backends]
        ref = next((r for r in rows if r["backend"] == "reference"), None)
        for r in rows:
            if ref is not None:
                r["rel_improvement_pct"] = relative_improvement(ref["median_ns"], r["median_ns"])
            if config.measure_memory:
                r["peak_rss_bytes"] = peak_rss(r["backend"], seed, config.batch, gamma, V, config.logit_scale,
                                               config.divergence, _decode_config(config, bounds, workers))
        report.rows.extend(rows)
    if config.out:
        write_report(report.rows, config.out, config.fmt)
    return report


def write_report(rows: list[dict], path: str, fmt: str = "csv", columns=REPORT_COLUMNS) -> None:
    """Write rows with a fixed column order; CSV is RFC 4180, JSONL is one object per line."""
    if fmt not in FORMATS:
        raise InvalidInputError(f"format must be one of {FORMATS}")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if fmt == "csv":
                w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
                w.writeheader()
                w.writerows({k: ("" if r.get(k) is None else r.get(k)) for k in columns} for r in rows)
            else:
                for r in rows:
                    fh.write(json.dumps({k: r.get(k) for k in columns}) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror or exc}") from exc


def read_report(path: str, fmt: str | None = None) -> list[dict]:
    """Parse a report written by :func:`write_report`; CSV values come back as strings."""
    fmt = fmt or ("jsonl" if os.fspath(path).endswith(".jsonl") else "csv")
    with open(path, newline="", encoding="utf-8") as fh:
        if fmt == "csv":
            return list(csv.DictReader(fh))
        return [json.loads(line) for line in fh if line.strip()]
