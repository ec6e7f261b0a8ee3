"""Optional numba acceleration.

Set ``PMPSIM_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
The kernels are written so that the same source runs under both paths.
"""

from __future__ import annotations

import os

_FLAG = "PMPSIM_DISABLE_NUMBA"


def numba_disabled() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and not numba_disabled()


def kernel(func):
    """Compile ``func`` with ``njit`` unless numba is missing or disabled.

    The undecorated Python function stays reachable as ``func.py_func`` on
    both paths, which the benchmark uses to time the fallback.
    """
    if USE_NUMBA:
        return _numba.njit(cache=True)(func)
    func.py_func = func
    return func


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
