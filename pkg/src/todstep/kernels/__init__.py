"""Token-scoring kernels with a compiled core and a pure-numpy fallback.

The compiled extension is preferred when present; set ``TODSTEP_PURE_PYTHON=1``
to force the numpy backend (used by the benchmark and the equivalence tests).
"""

import os

from . import hashing  # noqa: F401  (re-exported for backend-independent ids)

if os.environ.get("TODSTEP_PURE_PYTHON"):
    from . import _pykernels as _impl

    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        from . import _pykernels as _impl

        BACKEND = "python"

hash_features = _impl.hash_features
gather_scores = _impl.gather_scores
scatter_add = _impl.scatter_add

__all__ = [
    "BACKEND",
    "gather_scores",
    "hash_features",
    "hashing",
    "scatter_add",
]
