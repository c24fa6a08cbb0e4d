"""Opt into full-width SIMD for the pairwise kernels where the host allows it.

LLVM's tuning for avx512 server parts caps auto-vectorization at 256 bits;
the O(N^2) alignment sums are ~40% faster with 512-bit vectors.  Numba reads
the CPU target from the environment once, at first import, so this has to run
before anything pulls numba in.
"""

from __future__ import annotations

import os
import sys


def _enable_wide_simd() -> None:
    if "numba" in sys.modules:
        return
    if "NUMBA_CPU_NAME" in os.environ or "NUMBA_CPU_FEATURES" in os.environ:
        return
    try:
        import llvmlite.binding as llb

        feats = llb.get_host_cpu_features()
    except Exception:
        return
    if feats.get("avx512f"):
        os.environ["NUMBA_CPU_NAME"] = "generic"
        os.environ["NUMBA_CPU_FEATURES"] = feats.flatten()


_enable_wide_simd()
