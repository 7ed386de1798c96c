"""Numba toggle.

Set ``HIERMODEL_DISABLE_NUMBA=1`` to run every kernel through its pure
Python/numpy path. Numba is also skipped silently when it is not installed.
"""
import os

_FLAG = os.environ.get("HIERMODEL_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(func):
    """Compile ``func`` with ``numba.njit(cache=True)``; returns None when numba is off."""
    if numba is None:
        return None
    return numba.njit(cache=True)(func)


def pick(jitted, fallback):
    return jitted if (USE_NUMBA and jitted is not None) else fallback
