"""Selection between numba-compiled kernels and their numpy fallbacks.

Set ``AGREEMESH_NO_JIT=1`` to force the pure numpy path. The numpy path is
also used when numba is not importable.
"""
import os

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def _flag(name):
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


USE_JIT = HAVE_NUMBA and not _flag("AGREEMESH_NO_JIT")


def backend_name():
    return "numba" if USE_JIT else "numpy"
