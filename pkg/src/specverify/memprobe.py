"""Child-process entry point for peak-memory measurement.

Run as ``python -m specverify.memprobe '<json>'``; prints the peak resident
set size in bytes after synthesizing one step and verifying it.
"""

from __future__ import annotations

import json
import resource
import sys

from .decode import DecodeConfig, verify_step
from .dist import ScaleBounds


def probe(spec: dict) -> int:
    from .bench import step_inputs

    step = step_inputs(spec["seed"], spec["batch"], spec["gamma"], spec["vocab_size"],
                       spec["logit_scale"], spec["divergence"])
    cfg = DecodeConfig(tile_n=spec["tile_n"], workers=spec["workers"],
                       bounds=ScaleBounds(spec["alpha"], spec["beta"]),
                       half_precision=spec["half_precision"])
    for _ in range(spec.get("repeats", 3)):
        verify_step(spec["backend"], step.z_p, step.z_q, step.draft_tokens, step.uniforms, cfg)
    return peak_resident_bytes()


def peak_resident_bytes() -> int:
    """High-water RSS of this process's own address space.

    ``ru_maxrss`` of an exec'd child inherits the high-water mark of the image
    it replaced (the parent's, under vfork), so ``VmHWM`` is preferred.
    """
    try:
        with open("/proc/self/status", encoding="ascii") as fh:
            for line in fh:
                if line.startswith("VmHWM:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    # ru_maxrss is reported in KiB on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


if __name__ == "__main__":
    print(probe(json.loads(sys.argv[1])))
