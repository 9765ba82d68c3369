"""Numba switch.

Hot kernels are written once as plain Python loops and compiled with
``numba.njit`` when it is importable and ``FLOORGATE_NUMBA`` is not set to
``0``. Every kernel module also carries a pure-numpy twin; ``USE_NUMBA``
selects between them at import time.
"""
import os

_flag = os.environ.get("FLOORGATE_NUMBA", "1").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _flag not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
