"""Tiled, fused verification kernel with modeled memory traffic.

The vocabulary of every ``(batch, position)`` row is split into ``K`` tiles of
width ``n``.  A tile pass loads its slice of ``p`` and ``q`` once, produces the
clamped ratio at the drafted token (if it lives in the tile), the clamped
difference ``a_k`` and its partial sum ``b_k``.  Partial sums are combined by a
fixed-topology tree, so results do not depend on how tasks are scheduled.

Tasks are row blocks sized to fit the scratch budget; inside a task the tile
passes of all its rows run as one vectorized sweep.
"""

from __future__ import annotations

import functools
import threading
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dist import EPS, NO_BONUS, InvalidInputError, ratio_clamped, ratio_clamped_array, sample_inverse_cdf
from .reference import StepInputs, VerificationResult

DEFAULT_TILE = 1024
# Elements per operand held in a task's scratch; ~512 KiB of float64.
BLOCK_ELEMS = 1 << 16


@dataclass(frozen=True)
class TilePlan:
    vocab_size: int
    n: int
    tile_bounds: tuple[tuple[int, int], ...] = field(repr=False)

    @property
    def K(self) -> int:
        return len(self.tile_bounds)

    @property
    def full_tiles(self) -> int:
        return self.vocab_size // self.n

    @property
    def tail(self) -> int:
        return self.vocab_size % self.n

    def tile_of(self, index: int) -> int:
        return index // self.n


def plan_tiles(vocab_size: int, n: int = DEFAULT_TILE) -> TilePlan:
    """Partition ``[0, vocab_size)`` into ``ceil(vocab_size / n)`` ascending ranges."""
    if int(vocab_size) != vocab_size or int(n) != n or vocab_size < 1 or n < 1:
        raise InvalidInputError(f"vocab_size and n must be positive integers, got {vocab_size}, {n}")
    vocab_size, n = int(vocab_size), int(n)
    bounds = tuple((lo, min(lo + n, vocab_size)) for lo in range(0, vocab_size, n))
    return TilePlan(vocab_size, n, bounds)


@dataclass
class MemoryTrace:
    """Exact element counts of modeled HBM traffic.

    ``hbm_elem_reads_p``/``hbm_elem_reads_q`` count tile-pass loads of the
    target/draft inputs only.  Rows touched again during aggregation (bonus
    row, degenerate fallback) go to ``hbm_elem_reads_aggregate``.  Writes
    cover ``a_k``, ``b_k`` and ``tau_ck`` per tile pass plus the final
    division pass for every row that is sampled.
    """

    hbm_elem_reads_p: int = 0
    hbm_elem_reads_q: int = 0
    hbm_elem_reads_aggregate: int = 0
    hbm_elem_writes: int = 0
    peak_tile_bytes: int = 0
    kernel_invocations: int = 0

    def merge(self, other: MemoryTrace) -> MemoryTrace:
        self.hbm_elem_reads_p += other.hbm_elem_reads_p
        self.hbm_elem_reads_q += other.hbm_elem_reads_q
        self.hbm_elem_reads_aggregate += other.hbm_elem_reads_aggregate
        self.hbm_elem_writes += other.hbm_elem_writes
        self.peak_tile_bytes = max(self.peak_tile_bytes, other.peak_tile_bytes)
        self.kernel_invocations += other.kernel_invocations
        return self

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


def tile_footprint_bytes(length: int, itemsize: int = 8) -> int:
    """Modeled scratch for one tile pass: both input slices plus reduction scratch."""
    return (2 * length + (length + 1) // 2) * itemsize


@dataclass
class TilePartial:
    tile_index: int
    tau_ck: float | None
    a_k: np.ndarray
    b_k: float


def tree_sum(x: np.ndarray) -> np.ndarray:
    """Sum over the last axis with a fixed halving tree.

    Each level adds the upper half onto the lower half element-wise; an odd
    trailing element is carried to the next level.  The topology depends only
    on the length, never on scheduling.
    """
    s = np.asarray(x, dtype=np.float64)
    m = s.shape[-1]
    if m == 0:
        return np.zeros(s.shape[:-1])
    while m > 1:
        h = m // 2
        nxt = s[..., :h] + s[..., h:2 * h]
        if m % 2:
            nxt = np.concatenate([nxt, s[..., 2 * h:m]], axis=-1)
        s, m = nxt, nxt.shape[-1]
    return s[..., 0]


def _tile_block(p_rows: np.ndarray, q_rows: np.ndarray, a_out: np.ndarray, plan: TilePlan) -> np.ndarray:
    """All tile passes for a block of rows; writes ``a`` and returns ``b_k`` as (rows, K)."""
    f = np.subtract(p_rows, q_rows, out=a_out)
    np.maximum(f, 0.0, out=f)
    R = f.shape[0]
    full = plan.full_tiles * plan.n
    if plan.tail == 0:
        return tree_sum(f.reshape(R, plan.full_tiles, plan.n))
    b = np.empty((R, plan.K))
    if plan.full_tiles:
        b[:, :-1] = tree_sum(f[:, :full].reshape(R, plan.full_tiles, plan.n))
    b[:, -1] = tree_sum(f[:, full:])
    return b


def kernel_tile_pass(p_k, q_k, drafted_index_in_tile: int | None, trace: MemoryTrace,
                     tile_index: int = 0, n: int | None = None) -> TilePartial:
    """One tile pass over matching slices of a ``p`` row and a ``q`` row."""
    p_k = np.asarray(p_k, dtype=np.float64)
    q_k = np.asarray(q_k, dtype=np.float64)
    if p_k.ndim != 1 or p_k.shape != q_k.shape or p_k.size == 0:
        raise InvalidInputError(f"tile segments must be equal-length vectors, got {p_k.shape}, {q_k.shape}")
    L = p_k.size
    if n is not None and L > n:
        raise InvalidInputError(f"segment length {L} exceeds tile width {n}")
    a = np.empty_like(p_k)
    b_k = float(_tile_block(p_k[None], q_k[None], a[None], plan_tiles(L, L))[0, 0])
    tau = None
    if drafted_index_in_tile is not None:
        if not 0 <= drafted_index_in_tile < L:
            raise InvalidInputError("drafted index outside tile")
        tau = ratio_clamped(float(p_k[drafted_index_in_tile]), float(q_k[drafted_index_in_tile]))
    trace.merge(MemoryTrace(
        hbm_elem_reads_p=L, hbm_elem_reads_q=L,
        hbm_elem_writes=L + 1 + (tau is not None),
        peak_tile_bytes=tile_footprint_bytes(L, p_k.itemsize),
        kernel_invocations=1,
    ))
    return TilePartial(tile_index, tau, a, b_k)


@functools.lru_cache(maxsize=None)
def _pool(workers: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=workers, thread_name_prefix=f"tile{workers}")


def dispatch(fn: Callable, spans: Sequence[tuple[int, int]], workers: int) -> list:
    """Run ``fn(lo, hi)`` for every span; results come back in span order."""
    if workers < 1:
        raise InvalidInputError(f"workers must be >= 1, got {workers}")
    if workers == 1 or len(spans) == 1:
        return [fn(lo, hi) for lo, hi in spans]
    return list(_pool(workers).map(lambda s: fn(*s), spans))


_scratch = threading.local()


def scratch_buffers(rows: int, V: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-thread reusable buffers standing in for on-chip memory."""
    buf = getattr(_scratch, "buf", None)
    if buf is None or buf.shape[1] < rows or buf.shape[2] != V:
        buf = _scratch.buf = np.empty((2, rows, V))
    return buf[0, :rows], buf[1, :rows]


@dataclass
class KernelOutput:
    a: np.ndarray          # (R, V) clamped differences
    b_k: np.ndarray        # (R, K) per-tile partial sums
    tau: np.ndarray        # (R,) clamped ratio at the drafted token
    trace: MemoryTrace


def run_tile_kernel(load: Callable[[int, int], tuple[np.ndarray, np.ndarray]], R: int,
                    tokens: np.ndarray, plan: TilePlan, workers: int = 1,
                    block_elems: int = BLOCK_ELEMS) -> KernelOutput:
    """Run every tile pass over ``R`` flattened rows.

    ``load(lo, hi)`` returns the ``p`` and ``q`` rows ``lo:hi`` as the task
    sees them after its single load (for the sigmoid backend, after the
    activation has been applied in scratch).
    """
    V = plan.vocab_size
    a = np.empty((R, V))
    rows_per_task = max(1, block_elems // V)
    spans = [(lo, min(lo + rows_per_task, R)) for lo in range(0, R, rows_per_task)]
    footprint = max(tile_footprint_bytes(hi - lo) for lo, hi in plan.tile_bounds)

    def task(lo: int, hi: int):
        p_blk, q_blk = load(lo, hi)
        b_k = _tile_block(p_blk, q_blk, a[lo:hi], plan)
        rows = np.arange(hi - lo)
        x = tokens[lo:hi]
        tau = ratio_clamped_array(p_blk[rows, x], q_blk[rows, x])
        m = hi - lo
        trace = MemoryTrace(
            hbm_elem_reads_p=m * V, hbm_elem_reads_q=m * V,
            hbm_elem_writes=m * (V + plan.K + 1),
            peak_tile_bytes=footprint, kernel_invocations=m * plan.K,
        )
        return b_k, tau, trace

    b_k = np.empty((R, plan.K))
    tau = np.empty(R)
    trace = MemoryTrace()
    for (lo, hi), (b_blk, tau_blk, t) in zip(spans, dispatch(task, spans, workers)):
        b_k[lo:hi] = b_blk
        tau[lo:hi] = tau_blk
        trace.merge(t)
    return KernelOutput(a, b_k, tau, trace)


def aggregate(out: KernelOutput, B: int, gamma: int, uniforms: np.ndarray,
              fetch_row: Callable[[int, int], np.ndarray], has_bonus: bool) -> VerificationResult:
    """Combine partials into decisions, then resample or draw the bonus token.

    ``fetch_row(b, c)`` re-reads a target row for the degenerate fallback or
    the bonus position; each call is charged to the aggregate read counter.
    """
    V = out.a.shape[1]
    trace = out.trace
    tau = out.tau.reshape(B, gamma)
    b_tot = tree_sum(out.b_k).reshape(B, gamma)
    accept = uniforms[:, :gamma] <= tau
    all_acc = accept.all(axis=1)
    accepted_len = np.where(all_acc, gamma, np.argmin(accept, axis=1)).astype(np.int64)

    final = np.full(B, NO_BONUS, dtype=np.int64)
    resampled = ~all_acc
    mass = np.full(B, np.nan)
    rows = np.flatnonzero(resampled | has_bonus)
    if rows.size == 0:
        return VerificationResult(accepted_len, tau, final, resampled, mass)

    weights = np.empty((rows.size, V))
    denom = np.empty(rows.size)
    for j, b in enumerate(rows):
        c = accepted_len[b]
        if c < gamma:
            mass[b] = b_tot[b, c]
            if b_tot[b, c] > EPS:
                weights[j] = out.a[b * gamma + c]
                denom[j] = b_tot[b, c]
                continue
        weights[j] = fetch_row(b, c)
        denom[j] = tree_sum(weights[j])
        trace.hbm_elem_reads_aggregate += V

    u = uniforms[rows, gamma]
    usable = denom > EPS
    with np.errstate(invalid="ignore"):
        probs = weights / np.where(usable, denom, 1.0)[:, None]
    trace.hbm_elem_writes += int(usable.sum()) * V
    tokens = np.minimum((u * V).astype(np.int64), V - 1)
    if usable.any():
        tokens[usable] = sample_inverse_cdf(probs[usable], u[usable])
    final[rows] = tokens
    return VerificationResult(accepted_len, tau, final, resampled, mass)


def row_loader(p: np.ndarray, gamma: int, p_act: Callable, q_flat: np.ndarray,
               q_act: Callable) -> Callable[[int, int], tuple[np.ndarray, np.ndarray]]:
    """Loader over flattened ``(b, c)`` rows of ``p`` (which may carry a bonus row)."""
    B, rows_p, V = p.shape
    if rows_p == gamma or B == 1:
        p_flat = p[:, :gamma].reshape(B * gamma, V)
        return lambda lo, hi: (p_act(p_flat[lo:hi]), q_act(q_flat[lo:hi]))

    def load(lo: int, hi: int):
        r = np.arange(lo, hi)
        return p_act(p[r // gamma, r % gamma]), q_act(q_flat[lo:hi])
    return load


def _check_plan(plan: TilePlan, V: int) -> None:
    if plan.vocab_size != V:
        raise InvalidInputError(f"tile plan covers {plan.vocab_size} tokens, tensors have {V}")


def verify_fused(inputs: StepInputs, plan: TilePlan | None = None,
                 workers: int = 1) -> tuple[VerificationResult, MemoryTrace]:
    """Exact tiled verification; decisions and tokens match ``verify_sequential``."""
    B, gamma, V = inputs.batch, inputs.gamma, inputs.vocab_size
    plan = plan or plan_tiles(V)
    _check_plan(plan, V)
    q_flat = inputs.q.reshape(B * gamma, V)
    out = run_tile_kernel(row_loader(inputs.p, gamma, lambda blk: blk, q_flat, lambda blk: blk),
                          B * gamma, inputs.draft_tokens.reshape(-1), plan, workers)
    result = aggregate(out, B, gamma, inputs.uniforms, lambda b, c: inputs.p[b, c], inputs.has_bonus)
    return result, out.trace
