"""Numba switch shared by the hot kernels.

Set ``RIGIDREG3D_DISABLE_NUMBA=1`` before import to force the pure-numpy
code paths (useful for debugging and for the kernel benchmark).
"""

import os

_disabled = os.environ.get("RIGIDREG3D_DISABLE_NUMBA", "").strip().lower() in {
    "1",
    "true",
    "yes",
    "on",
}

try:
    if _disabled:
        raise ImportError("numba disabled by RIGIDREG3D_DISABLE_NUMBA")
    import numba
    from numba import njit, prange

    NUMBA_AVAILABLE = True
except ImportError:
    numba = None
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator

    prange = range


def set_threads(n):
    """Cap numba's thread pool; returns the count actually applied."""
    if not NUMBA_AVAILABLE or n is None:
        return n
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n
