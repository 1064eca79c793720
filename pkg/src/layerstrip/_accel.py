"""Numba switch.

Hot kernels are compiled with numba when it is importable and the
``LAYERSTRIP_DISABLE_NUMBA`` environment variable is unset (or ``0``).
Otherwise the pure-numpy implementations are used.  The flag is read once,
at import time.
"""

import os

_flag = os.environ.get("LAYERSTRIP_DISABLE_NUMBA", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, identity decorator otherwise."""
    if HAVE_NUMBA:
        return _njit(*args, cache=True, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
