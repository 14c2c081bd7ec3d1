"""Run every validation suite at its default budget and exit non-zero on failure."""

from __future__ import annotations

import argparse
import sys
import time

from specverify.validation import SUITES, validate


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    ok = True
    for suite in SUITES:
        t0 = time.perf_counter()
        results = validate(suite, None, args.seed, args.workers)
        for r in results:
            print(r.summary())
            ok &= r.passed
        print(f"  ({suite}: {time.perf_counter() - t0:.1f}s)")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
