"""Trajectory-constrained visual attention for reward-predictive local planning."""

import os

# BLAS thread count must be fixed before numpy loads for bit-reproducible runs.
_threads = os.environ.get("TRAJATTN_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
