"""Numba on/off switch for the hot kernels.

Set STEERLAB_DISABLE_NUMBA=1 to skip JIT compilation and run the same
kernel source as plain Python/NumPy. The fallback is much slower but
numerically identical (same operations in the same order); it exists for
debugging, for environments without a working numba, and for the backend
benchmark under benchmarks/.
"""

import os


def _disabled_by_env() -> bool:
    flag = os.environ.get("STEERLAB_DISABLE_NUMBA", "").strip().lower()
    return flag in ("1", "true", "yes")


try:
    import numba as _numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    _HAVE_NUMBA = False

NUMBA_ENABLED = _HAVE_NUMBA and not _disabled_by_env()


def njit(func):
    """Compile `func` with numba when enabled, else return it unchanged."""
    if NUMBA_ENABLED:
        return _numba.njit(cache=True)(func)
    return func
