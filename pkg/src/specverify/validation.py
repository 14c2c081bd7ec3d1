"""Named validation suites that execute the engine's invariants and report statistics."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .decode import DecodeConfig, GammaState, decode, gamma_update, make_model_pair
from .dist import InvalidInputError, ScaleBounds, sample_inverse_cdf, sigmoid_scaled_values, softmax
from .fused import plan_tiles, verify_fused
from .instances import synth_step
from .reference import StepInputs, VerificationResult, verify_sequential
from .sigmoid import verify_sigmoid_fused, verify_sigmoid_sequential

SUITES = ("distribution", "acceptance", "oracle", "memory", "gamma")
DEFAULT_BUDGET = {"distribution": 100_000, "acceptance": 100_000, "oracle": 1080, "memory": 50, "gamma": 100}
MIN_BUDGET = {"distribution": 10_000, "acceptance": 10_000, "oracle": 1, "memory": 1, "gamma": 1}

TV_LIMIT = 0.01
CHI2_MIN_P = 1e-3
ACCEPT_TOL = 0.01
VALUE_TOL = 1e-6

ORACLE_VOCABS = (7, 257, 50257)
ORACLE_TILES = (4, 256, 1024)
ORACLE_BATCHES = (1, 4)
ORACLE_GAMMAS = tuple(range(1, 21))
ORACLE_BOUNDS = (ScaleBounds.symmetric(1e1), ScaleBounds.symmetric(1e2), ScaleBounds.symmetric(1e3))
DETERMINISM_WORKERS = (1, 2, 8)


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    stats: dict = field(default_factory=dict)

    def summary(self) -> str:
        detail = " ".join(f"{k}={_fmt(v)}" for k, v in self.stats.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.suite}/{self.name} {detail}".rstrip()


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def instance_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent Philox stream for instance ``index`` of a seeded run."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(index)]))


def total_variation(counts: np.ndarray, probs: np.ndarray) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    return 0.5 * float(np.abs(counts / counts.sum() - np.asarray(probs)).sum())


def acceptance_oracle(p, q) -> float:
    """Brute-force sum over the vocabulary of ``min(p(x), q(x))``."""
    return math.fsum(min(float(a), float(b)) for a, b in zip(p, q))


def fixture_pair(vocab_size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    z = rng.normal(0.0, 1.5, vocab_size)
    return softmax(z), softmax(z + rng.normal(0.0, 1.0, vocab_size))


def eight_token_fixture() -> tuple[np.ndarray, np.ndarray]:
    """Eight-token pair with ``sum min(p, q) = 0.6``, built from the 2-token reject example."""
    p = np.full(8, 0.125)
    q = np.tile([0.225, 0.025], 4)
    return p, q


def speculative_first_tokens(p: np.ndarray, q: np.ndarray, trials: int, rng: np.random.Generator,
                             backend: str = "fused", workers: int = 1) -> tuple[np.ndarray, VerificationResult]:
    """Emitted token of ``trials`` independent one-draft steps from a frozen context."""
    V = p.size
    draft = sample_inverse_cdf(np.broadcast_to(q, (trials, V)), rng.random(trials))
    inputs = StepInputs(np.broadcast_to(p, (trials, 1, V)), np.broadcast_to(q, (trials, 1, V)),
                        draft[:, None], rng.random((trials, 2)))
    if backend == "reference":
        result = verify_sequential(inputs)
    elif backend == "fused":
        result = verify_fused(inputs, workers=workers)[0]
    else:
        raise InvalidInputError(f"distribution checks need an exact backend, got {backend!r}")
    emitted = np.where(result.accepted_len == 1, draft, result.final_token)
    return emitted, result


def suite_distribution(budget: int, seed: int = 0, workers: int = 1) -> list[CheckResult]:
    p, q = fixture_pair(8, instance_rng(seed, 0))
    direct = instance_rng(seed, 1).choice(p.size, size=budget, p=p)
    direct_counts = np.bincount(direct, minlength=p.size)
    out = []
    for k, backend in enumerate(("reference", "fused")):
        emitted, _ = speculative_first_tokens(p, q, budget, instance_rng(seed, 2 + k), backend, workers)
        counts = np.bincount(emitted, minlength=p.size)
        tv_direct = 0.5 * float(np.abs(counts - direct_counts).sum()) / budget
        pvalue = float(stats.chisquare(counts, budget * p).pvalue)
        tv_exact = total_variation(counts, p)
        out.append(CheckResult("distribution", backend, tv_direct < TV_LIMIT and tv_exact < TV_LIMIT
                               and pvalue > CHI2_MIN_P,
                               {"trials": budget, "tv_vs_direct": tv_direct, "tv_vs_p": tv_exact,
                                "chi2_p": pvalue}))
    return out


def suite_acceptance(budget: int, seed: int = 0, workers: int = 1, pairs: int = 10,
                     backend: str = "fused") -> list[CheckResult]:
    fixtures = [eight_token_fixture()]
    fixtures += [fixture_pair(8, instance_rng(seed, 100 + i)) for i in range(pairs)]
    worst, rows = 0.0, []
    for i, (p, q) in enumerate(fixtures):
        _, result = speculative_first_tokens(p, q, budget, instance_rng(seed, 200 + i), backend, workers)
        empirical = float(np.mean(result.accepted_len >= 1))
        err = abs(empirical - acceptance_oracle(p, q))
        worst = max(worst, err)
        rows.append(err)
    stats_ = {"pairs": len(fixtures), "trials": budget, "max_abs_err": worst,
              "fixture_err": rows[0]}
    return [CheckResult("acceptance", backend, worst < ACCEPT_TOL, stats_)]


def compare_results(a: VerificationResult, b: VerificationResult, tol: float = VALUE_TOL) -> list[str]:
    """Differences between two results: exact on decisions and tokens, ``tol`` on values."""
    problems = []
    for name in ("accepted_len", "resample_used", "final_token"):
        if not np.array_equal(getattr(a, name), getattr(b, name)):
            problems.append(name)
    for name in ("tau", "residual_mass"):
        x, y = getattr(a, name), getattr(b, name)
        if not np.array_equal(np.isnan(x), np.isnan(y)):
            problems.append(name)
        elif np.nan_to_num(np.abs(x - y)).max(initial=0.0) > tol:
            problems.append(name)
    return problems


def oracle_grid():
    return list(itertools.product(ORACLE_VOCABS, ORACLE_TILES, ORACLE_BATCHES, ORACLE_GAMMAS))


def oracle_instance(seed: int, index: int):
    """Instance ``index`` of the oracle grid; cycles through every (V, n, B, gamma) cell."""
    grid = oracle_grid()
    V, n, B, gamma = grid[index % len(grid)]
    rng = instance_rng(seed, 10_000 + index)
    bonus = bool(rng.random() < 0.5)
    logit_scale = float(rng.choice([1.0, 3.0, 12.0]))
    divergence = float(rng.choice([0.5, 2.0]))
    bounds = ORACLE_BOUNDS[int(rng.integers(len(ORACLE_BOUNDS)))]
    step = synth_step(rng, B, gamma, V, bonus=bonus, logit_scale=logit_scale, divergence=divergence,
                      tie_prob=0.15, offdraft_prob=0.1)
    return step, plan_tiles(V, n), bounds


def argmax_agrees(z_p: np.ndarray, bounds: ScaleBounds) -> bool:
    p_hat = sigmoid_scaled_values(z_p, bounds)
    return bool(np.array_equal(p_hat.argmax(axis=-1), softmax(z_p).argmax(axis=-1)))


def suite_oracle(budget: int, seed: int = 0, workers: int = 1, determinism_seeds: int = 100) -> list[CheckResult]:
    fused_bad, sig_bad, argmax_bad = [], [], 0
    max_tau = max_mass = 0.0
    t_exact = t_sigmoid = 0.0
    cover = {"rejections": 0, "bonus_draws": 0, "degenerate": 0, "tiny_q": 0, "sigmoid_rejections": 0}
    for i in range(budget):
        t0 = time.perf_counter()
        step, plan, bounds = oracle_instance(seed, i)
        exact = step.probs()
        ref = verify_sequential(exact)
        got, _ = verify_fused(exact, plan, workers)
        t1 = time.perf_counter()
        if compare_results(ref, got):
            fused_bad.append(i)
        max_tau = max(max_tau, float(np.abs(ref.tau - got.tau).max()))
        both = ~np.isnan(ref.residual_mass)
        if both.any():
            max_mass = max(max_mass, float(np.abs(ref.residual_mass[both] - got.residual_mass[both]).max()))
        cover["rejections"] += int(ref.resample_used.sum())
        cover["bonus_draws"] += int(((~ref.resample_used) & (ref.final_token >= 0)).sum())
        cover["degenerate"] += int((ref.residual_mass <= 1e-12).sum())
        q_at = np.take_along_axis(exact.q, exact.draft_tokens[..., None], axis=-1)
        cover["tiny_q"] += int((q_at <= 1e-12).sum())

        t2 = time.perf_counter()
        sig = step.sigmoid(bounds)
        sig_ref = verify_sigmoid_sequential(sig)
        if compare_results(sig_ref, verify_sigmoid_fused(sig, plan, workers)[0]):
            sig_bad.append(i)
        cover["sigmoid_rejections"] += int(sig_ref.resample_used.sum())
        argmax_bad += not argmax_agrees(step.z_p, bounds)
        t_exact += t1 - t0
        t_sigmoid += time.perf_counter() - t2
    out = [
        CheckResult("oracle", "fused_vs_reference", not fused_bad,
                    {"instances": budget, "mismatches": len(fused_bad), "max_tau_err": max_tau,
                     "max_b_err": max_mass, "first_bad": fused_bad[:5], "seconds": t_exact,
                     **{k: v for k, v in cover.items() if k != "sigmoid_rejections"}}),
        CheckResult("oracle", "sigmoid_vs_oracle", not sig_bad,
                    {"instances": budget, "mismatches": len(sig_bad), "first_bad": sig_bad[:5],
                     "rejections": cover["sigmoid_rejections"], "seconds": t_sigmoid}),
        CheckResult("oracle", "sigmoid_argmax", argmax_bad == 0,
                    {"instances": budget, "instances_disagreeing": argmax_bad}),
    ]
    out.append(check_determinism(determinism_seeds, seed))
    return out


def _bits(result: VerificationResult) -> tuple:
    return tuple(np.ascontiguousarray(getattr(result, f)).tobytes()
                 for f in ("accepted_len", "tau", "final_token", "resample_used", "residual_mass"))


def check_determinism(seeds: int, seed: int = 0, workers=DETERMINISM_WORKERS) -> CheckResult:
    """Fused and sigmoid results must be bit-identical for every worker count."""
    bad = []
    for s in range(seeds):
        rng = instance_rng(seed, 50_000 + s)
        B, gamma = (1, 4)[s % 2], 1 + s % 20
        V, n = (257, 4096, 50257)[s % 3], (4, 256, 1024)[s % 3]
        step = synth_step(rng, B, gamma, V, tie_prob=0.1)
        plan = plan_tiles(V, n)
        exact, sig = step.probs(), step.sigmoid(ORACLE_BOUNDS[s % 3])
        for fn, inputs in ((verify_fused, exact), (verify_sigmoid_fused, sig)):
            ref = None
            for w in workers:
                bits = _bits(fn(inputs, plan, w)[0])
                if ref is None:
                    ref = bits
                elif bits != ref:
                    bad.append((s, fn.__name__, w))
    return CheckResult("oracle", "worker_determinism", not bad,
                       {"seeds": seeds, "workers": list(workers), "mismatches": len(bad)})


def expected_trace(B: int, gamma: int, V: int, n: int) -> dict[str, int]:
    plan = plan_tiles(V, n)
    return {"reads": B * gamma * V, "invocations": B * gamma * plan.K,
            # both operand slices plus half a tile of reduction scratch, float64
            "peak_bound": 2 * n * 8 + (n + 1) // 2 * 8}


def suite_memory(budget: int, seed: int = 0, workers: int = 1) -> list[CheckResult]:
    cases = [(1, 3, 1000, 256)]
    rng = instance_rng(seed, 3)
    for _ in range(budget - 1 if budget > 1 else 0):
        cases.append((int(rng.choice([1, 4])), int(rng.integers(1, 21)),
                      int(rng.choice([7, 257, 1000, 50257])), int(rng.choice([4, 256, 1024]))))
    bad = []
    for i, (B, gamma, V, n) in enumerate(cases):
        step = synth_step(instance_rng(seed, 20_000 + i), B, gamma, V, bonus=i % 2 == 0)
        exp = expected_trace(B, gamma, V, n)
        plan = plan_tiles(V, n)
        for name, (_, trace) in (("fused", verify_fused(step.probs(), plan, workers)),
                                 ("sigmoid", verify_sigmoid_fused(step.sigmoid(ORACLE_BOUNDS[2]), plan, workers))):
            ok = (trace.hbm_elem_reads_p == exp["reads"] and trace.hbm_elem_reads_q == exp["reads"]
                  and trace.kernel_invocations == exp["invocations"]
                  and trace.peak_tile_bytes <= exp["peak_bound"])
            if not ok:
                bad.append((i, name, trace.as_dict()))
    first = cases[0]
    return [CheckResult("memory", "load_once", not bad,
                        {"runs": 2 * len(cases), "violations": len(bad),
                         "example": f"B={first[0]} gamma={first[1]} V={first[2]} n={first[3]} "
                                    f"reads={expected_trace(*first)['reads']}"})]


def replay_gamma(history: list[int], accepted: list[int], max_gamma: int = 64) -> list[int]:
    """Steps whose recorded transition disagrees with the update rule."""
    bad = []
    for i, n_acc in enumerate(accepted):
        state = GammaState(history[i], 1, max_gamma)
        if gamma_update(state, n_acc == history[i]).gamma != history[i + 1]:
            bad.append(i)
    return bad


def suite_gamma(budget: int, seed: int = 0, workers: int = 1) -> list[CheckResult]:
    fixed = {
        "5_accept": gamma_update(GammaState(5), True).gamma == 7,
        "5_reject": gamma_update(GammaState(5), False).gamma == 4,
        "1_reject": gamma_update(GammaState(1), False).gamma == 1,
    }
    bad_steps = steps = 0
    for s in range(budget):
        divergence = (0.0, 1.0, 5.0)[s % 3]
        target, draft = make_model_pair(seed + s, 16, divergence)
        _, st = decode(target, draft, [0], 40, "fused", DecodeConfig(seed=seed + s, workers=workers))
        bad_steps += len(replay_gamma(st.gamma_history, st.accepted_history))
        steps += st.steps
    target, draft = make_model_pair(seed, 16, 0.0)
    _, st = decode(target, draft, [0], 12, "reference", DecodeConfig(seed=seed))
    start_ok = st.gamma_history[:3] == [5, 7, 9]
    return [CheckResult("gamma", "update_rule", all(fixed.values()),
                        dict(fixed)),
            CheckResult("gamma", "replay", bad_steps == 0 and start_ok,
                        {"runs": budget, "steps": steps, "bad_steps": bad_steps,
                         "all_accept_start": st.gamma_history[:3]})]


_SUITE_FNS = {
    "distribution": suite_distribution,
    "acceptance": suite_acceptance,
    "oracle": suite_oracle,
    "memory": suite_memory,
    "gamma": suite_gamma,
}


def validate(suite: str, budget: int | None = None, seed: int = 0, workers: int = 1) -> list[CheckResult]:
    """Run one named suite; ``budget`` is its trial or instance count."""
    if suite not in _SUITE_FNS:
        raise InvalidInputError(f"unknown suite {suite!r}; expected one of {SUITES}")
    budget = DEFAULT_BUDGET[suite] if budget is None else int(budget)
    if budget < MIN_BUDGET[suite]:
        raise InvalidInputError(f"suite {suite} needs a budget of at least {MIN_BUDGET[suite]}, got {budget}")
    return _SUITE_FNS[suite](budget, seed, workers)

