"""Command-line entry point: ``specverify {bench,validate,decode,ablate-scale}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace

from .ablation import ABLATION_COLUMNS, DEFAULT_SCALES, PROFILES, ablate_scale
from .bench import FORMATS, REPORT_COLUMNS, BenchConfig, run_bench, write_report
from .decode import BACKENDS, DecodeConfig, decode, make_model_pair
from .dist import ASR_BOUNDS, InvalidInputError, ScaleBounds
from .fused import DEFAULT_TILE
from .validation import SUITES, validate

EXIT_FAIL = 1
EXIT_USAGE = 2


def parse_int_list(text: str) -> tuple[int, ...]:
    """``"5"``, ``"1,2,5"`` or an inclusive range ``"1..20"``."""
    out: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if ".." in part:
                lo, hi = (int(x) for x in part.split("..", 1))
                if hi < lo:
                    raise ValueError
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an int, a list or a range like 1..20, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return tuple(out)


def parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def parse_backends(text: str) -> tuple[str, ...]:
    if text == "all":
        return BACKENDS
    names = tuple(x.strip() for x in text.split(","))
    bad = [n for n in names if n not in BACKENDS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown backend(s) {bad}; choose from {BACKENDS} or 'all'")
    return names


def _bounds(args, default: ScaleBounds | None = ASR_BOUNDS) -> ScaleBounds | None:
    if (args.alpha is None) != (args.beta is None):
        raise InvalidInputError("--alpha and --beta must be given together")
    if args.alpha is None:
        return default
    return ScaleBounds(args.alpha, args.beta)


def _common(p: argparse.ArgumentParser, *, backend_default: str, vocab_default: str, gamma_default: str,
            trials_help: str) -> None:
    p.add_argument("--seed", type=int, default=0, help="base seed (u64)")
    p.add_argument("--vocab", type=parse_int_list, default=parse_int_list(vocab_default),
                   help=f"vocabulary size(s) (default {vocab_default})")
    p.add_argument("--gamma", type=parse_int_list, default=parse_int_list(gamma_default),
                   help=f"draft length: int, list or range like 1..20 (default {gamma_default})")
    p.add_argument("--tile-n", type=int, default=DEFAULT_TILE, help="tile width (default 1024)")
    p.add_argument("--alpha", type=float, default=None, help="sigmoid lower bound")
    p.add_argument("--beta", type=float, default=None, help="sigmoid upper bound")
    p.add_argument("--backend", type=parse_backends, default=parse_backends(backend_default),
                   help=f"{'|'.join(BACKENDS)}, a comma list or 'all' (default {backend_default})")
    p.add_argument("--workers", type=parse_int_list, default=(1,), help="worker count(s)")
    p.add_argument("--trials", type=int, default=None, help=trials_help)
    p.add_argument("--format", choices=FORMATS, default="csv", dest="fmt")
    p.add_argument("--out", default=None, help="output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specverify", description="Speculative-sampling verification engine")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="time the backends over a vocab x gamma grid")
    _common(b, backend_default="all", vocab_default="32768", gamma_default="1..20",
            trials_help="timed iterations per grid point (default 30)")
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--batch", type=int, default=1)
    b.add_argument("--divergence", type=float, default=BenchConfig.divergence)
    b.add_argument("--logit-scale", type=float, default=BenchConfig.logit_scale)
    b.add_argument("--half", action="store_true", help="float16 emulation for the sigmoid backend")
    b.add_argument("--no-memory", action="store_true", help="skip the peak-RSS child processes")

    v = sub.add_parser("validate", help="run a statistical or contract suite")
    v.add_argument("suite", choices=SUITES + ("all",))
    _common(v, backend_default="fused", vocab_default="8", gamma_default="1",
            trials_help="suite budget: trials or instances (default per suite)")

    d = sub.add_parser("decode", help="speculative decoding over seeded toy models")
    _common(d, backend_default="fused", vocab_default="64", gamma_default="5",
            trials_help="number of seeds to decode (default 1)")
    d.add_argument("--max-len", type=int, default=64)
    d.add_argument("--divergence", type=float, default=1.0)
    d.add_argument("--logit-scale", type=float, default=3.0)
    d.add_argument("--max-gamma", type=int, default=64)
    d.add_argument("--half", action="store_true")
    d.add_argument("--prompt", type=parse_int_list, default=(0,))

    a = sub.add_parser("ablate-scale", help="sigmoid bounds ablation against the exact backend")
    _common(a, backend_default="sigmoid", vocab_default="64", gamma_default="5",
            trials_help="number of seeds per grid point (default 8)")
    a.add_argument("--profile", choices=sorted(PROFILES), default="text")
    a.add_argument("--scales", type=parse_float_list, default=DEFAULT_SCALES,
                   help="symmetric bound magnitudes (default 1e1,1e3,1e4,1e5,1e9)")
    a.add_argument("--max-len", type=int, default=None)
    return parser


def _emit(rows: list[dict], columns, args) -> None:
    if args.out:
        write_report(rows, args.out, args.fmt, columns)
        print(f"wrote {len(rows)} rows to {args.out}", file=sys.stderr)
    elif args.fmt == "jsonl":
        for r in rows:
            print(json.dumps({k: r.get(k) for k in columns}))
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        w.writerows({k: ("" if r.get(k) is None else r.get(k)) for k in columns} for r in rows)


def cmd_bench(args) -> int:
    cfg = BenchConfig(
        backends=args.backend, vocab_sizes=args.vocab, gammas=args.gamma, tile_n=args.tile_n,
        bounds=(_bounds(args),), seeds=(args.seed,), iterations=args.trials or 30, warmup=args.warmup,
        workers=args.workers, batch=args.batch, logit_scale=args.logit_scale, divergence=args.divergence,
        half_precision=args.half, measure_memory=not args.no_memory, out=args.out, fmt=args.fmt,
    )
    report = run_bench(cfg)
    if not args.out:
        _emit(report.rows, REPORT_COLUMNS, args)
    else:
        print(f"wrote {len(report.rows)} rows to {args.out}", file=sys.stderr)
    for r in report.rows:
        rel = r["rel_improvement_pct"]
        print(f"{r['backend']:>9} V={r['vocab_size']} gamma={r['gamma']:>2} "
              f"median={r['median_ns'] / 1e6:8.3f} ms"
              + ("" if rel is None else f"  vs reference {rel:+6.1f}%"), file=sys.stderr)
    return 0


VALIDATE_COLUMNS = ("suite", "name", "passed", "stats")


def cmd_validate(args) -> int:
    suites = SUITES if args.suite == "all" else (args.suite,)
    results = []
    for s in suites:
        results.extend(validate(s, args.trials, args.seed, args.workers[0]))
    for r in results:
        print(r.summary())
    if args.out:
        write_report([{"suite": r.suite, "name": r.name, "passed": r.passed,
                       "stats": json.dumps(r.stats, default=str)} for r in results],
                     args.out, args.fmt, VALIDATE_COLUMNS)
    return 0 if all(r.passed for r in results) else EXIT_FAIL


DECODE_COLUMNS = ("backend", "seed", "vocab_size", "tokens_emitted", "steps", "total_drafted",
                  "total_accepted", "acceptance_rate", "mean_verify_ns", "gamma_history", "tokens")


def cmd_decode(args) -> int:
    bounds = _bounds(args)
    rows = []
    for backend in args.backend:
        for k in range(args.trials or 1):
            seed = args.seed + k
            target, draft = make_model_pair(seed, args.vocab[0], args.divergence, logit_scale=args.logit_scale)
            cfg = DecodeConfig(gamma_init=args.gamma[0], max_gamma=args.max_gamma, tile_n=args.tile_n,
                               workers=args.workers[0], bounds=bounds, half_precision=args.half, seed=seed)
            toks, st = decode(target, draft, list(args.prompt), args.max_len, backend, cfg)
            rows.append({
                "backend": backend, "seed": seed, "vocab_size": args.vocab[0],
                "tokens_emitted": st.tokens_emitted, "steps": st.steps, "total_drafted": st.total_drafted,
                "total_accepted": st.total_accepted, "acceptance_rate": st.acceptance_rate,
                "mean_verify_ns": sum(st.verify_ns) / len(st.verify_ns),
                "gamma_history": " ".join(map(str, st.gamma_history)), "tokens": " ".join(map(str, toks)),
            })
    _emit(rows, DECODE_COLUMNS, args)
    return 0


def cmd_ablate(args) -> int:
    profile = PROFILES[args.profile]
    profile = replace(profile, vocab_size=args.vocab[0],
                      seeds=tuple(range(args.seed, args.seed + (args.trials or len(profile.seeds)))),
                      max_len=args.max_len or profile.max_len)
    grid = [ScaleBounds.symmetric(s) for s in args.scales]
    extra = _bounds(args, default=None)
    if extra is not None:
        grid.append(extra)
    base = DecodeConfig(gamma_init=args.gamma[0], tile_n=args.tile_n, workers=args.workers[0])
    rows = [r.as_dict() for r in ablate_scale(grid, profile, base)]
    _emit(rows, ABLATION_COLUMNS, args)
    return 0


COMMANDS = {"bench": cmd_bench, "validate": cmd_validate, "decode": cmd_decode, "ablate-scale": cmd_ablate}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InvalidInputError as exc:
        parser.error(str(exc))
    except OSError as exc:
        print(f"specverify: error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
