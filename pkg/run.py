#!/usr/bin/env python3
from __future__ import annotations

import os

# BLAS reads its thread count when numpy is first imported
_threads = os.environ.get("DGMM_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from dgmmkit.cli import main  # noqa: E402


if __name__ == "__main__":
    exit(main())
