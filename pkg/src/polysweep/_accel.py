"""Numba switch for the numeric kernels.

Kernels are written in the numpy subset numba understands.  They are
compiled with ``numba.njit`` unless ``POLYSWEEP_DISABLE_NUMBA`` is set to a
truthy value (or numba is not importable), in which case the plain Python
functions run unchanged.
"""

import os

_FLAG = os.environ.get("POLYSWEEP_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLED


def jit(fn):
    """Compile ``fn`` with numba when enabled; keep the Python original as ``py_func``."""
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    fn.py_func = fn
    return fn
