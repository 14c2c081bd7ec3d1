"""Time all backends over gamma 1..20 and print the relative improvements.

    python3 scripts/gamma_sweep.py --vocab 32768 --iterations 30 --out sweep.csv
"""

from __future__ import annotations

import argparse

from specverify.bench import BenchConfig, run_bench


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vocab", type=int, default=32768)
    ap.add_argument("--max-gamma", type=int, default=20)
    ap.add_argument("--iterations", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--memory", action="store_true", help="also probe peak RSS (slow)")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    cfg = BenchConfig(vocab_sizes=(args.vocab,), gammas=tuple(range(1, args.max_gamma + 1)),
                      iterations=args.iterations, seeds=(args.seed,), measure_memory=args.memory, out=args.out)
    report = run_bench(cfg)
    print(f"{'gamma':>5} {'reference ms':>13} {'fused ms':>9} {'sigmoid ms':>11} {'fused %':>8} {'sigmoid %':>10}")
    for g in cfg.gammas:
        r = {row["backend"]: row for row in report.rows if row["gamma"] == g}
        print(f"{g:>5} {r['reference']['median_ns'] / 1e6:13.3f} {r['fused']['median_ns'] / 1e6:9.3f} "
              f"{r['sigmoid']['median_ns'] / 1e6:11.3f} {r['fused']['rel_improvement_pct']:8.1f} "
              f"{r['sigmoid']['rel_improvement_pct']:10.1f}")


if __name__ == "__main__":
    main()
