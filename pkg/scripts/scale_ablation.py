"""Sigmoid bounds ablation for both task profiles, full and half precision.

    python3 scripts/scale_ablation.py --scales 1e1,1e3,1e4,1e5,1e9
"""

from __future__ import annotations

import argparse

from specverify.ablation import DEFAULT_SCALES, PROFILES, ablate_scale


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scales", default=",".join(f"{s:g}" for s in DEFAULT_SCALES))
    ap.add_argument("--profiles", default=",".join(sorted(PROFILES)))
    args = ap.parse_args()

    scales = [float(s) for s in args.scales.split(",")]
    for name in args.profiles.split(","):
        print(f"profile {name}")
        print(f"{'bound':>8} {'accept':>7} {'div':>6} {'accept16':>9} {'div16':>6}")
        for row in ablate_scale(scales, name):
            print(f"{row.beta:8.0e} {row.acceptance_rate:7.3f} {row.divergence:6.3f} "
                  f"{row.acceptance_rate_half:9.3f} {row.divergence_half:6.3f}")


if __name__ == "__main__":
    main()
