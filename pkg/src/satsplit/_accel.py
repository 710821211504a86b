"""Numba switch.

Set ``SATSPLIT_DISABLE_NUMBA=1`` before import to force the pure
Python/numpy code paths (useful for debugging and for benchmarking the
two paths against each other).
"""

import os

_DISABLED = os.environ.get("SATSPLIT_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    import numba

    NUMBA_ENABLED = True
except ImportError:
    numba = None
    NUMBA_ENABLED = False


def njit(func):
    """``numba.njit(cache=True)`` when numba is enabled, identity otherwise."""
    if NUMBA_ENABLED:
        return numba.njit(cache=True)(func)
    return func
