"""Numba switch.

Set ``DAF3D_DISABLE_NUMBA=1`` to force the pure numpy/scipy kernels, e.g. when
numba is unavailable or when comparing both paths in the benchmark.
"""

import os

_DISABLED = os.environ.get("DAF3D_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("numba disabled by DAF3D_DISABLE_NUMBA")
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, otherwise the identity decorator."""
    if HAVE_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
