"""Numba switch.

Hot kernels are written twice: a scalar-loop version compiled with
``numba.njit`` and a vectorised numpy version. Setting the environment
variable ``KLQUANT_DISABLE_NUMBA=1`` (or running without numba installed)
selects the numpy path everywhere.
"""

import os

_FLAG = os.environ.get("KLQUANT_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise the identity decorator.

    The undecorated function stays importable either way so the numba
    kernels can be benchmarked against the numpy path in one process.
    """
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def wrapper(f):
        return f

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrapper


def backend():
    return "numba" if USE_NUMBA else "numpy"
