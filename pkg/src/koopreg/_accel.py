"""Numba/NumPy backend selection for the hot numeric kernels.

Every performance-critical inner loop in this package exists twice: a
``numba.njit``-compiled version and a pure-NumPy fallback. The active path is
chosen at call time by :func:`numba_enabled`, so the environment variable

    KOOPREG_NUMBA=0        # force the pure-NumPy fallback
    KOOPREG_NUMBA=1        # force numba (error if numba is missing)

can flip the backend without reinstalling. Unset, numba is used whenever it
imports. ``koopreg accel-bench`` times both paths side by side.
"""

from __future__ import annotations

import os

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        """No-op stand-in so @njit-decorated modules still import."""
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


_ENV_VAR = "KOOPREG_NUMBA"
_FALSY = {"0", "false", "no", "off", ""}


def numba_enabled() -> bool:
    """True when compiled kernels should be used for this call."""
    raw = os.environ.get(_ENV_VAR)
    if raw is None:
        return HAVE_NUMBA
    if raw.strip().lower() in _FALSY:
        return False
    if not HAVE_NUMBA:
        raise RuntimeError(f"{_ENV_VAR}={raw!r} requests numba, but numba is not importable")
    return True


def backend_name() -> str:
    return "numba" if numba_enabled() else "numpy"
