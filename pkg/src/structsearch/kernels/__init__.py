"""Kernel selection: compiled extension when available, numpy fallback otherwise.

Set STRUCTSEARCH_PURE_PYTHON=1 to force the numpy fallback.
"""

import os

from . import lj_numpy

if os.environ.get("STRUCTSEARCH_PURE_PYTHON", "0") == "1":
    _impl = lj_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _ljcore as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = lj_numpy
        BACKEND = "numpy"

lj_periodic_batch = _impl.lj_periodic_batch
lj_cluster_batch = _impl.lj_cluster_batch
min_pair_distance = _impl.min_pair_distance

__all__ = [
    "BACKEND",
    "lj_periodic_batch",
    "lj_cluster_batch",
    "min_pair_distance",
    "lj_numpy",
]
