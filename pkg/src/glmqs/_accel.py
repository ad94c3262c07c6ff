"""Optional numba acceleration.

Kernels decorated with :func:`jit` are compiled with ``numba.njit`` when numba
is importable and the environment variable ``GLMQS_DISABLE_JIT`` is unset (or
``0``). Otherwise the decorator is a no-op, and callers are expected to pick
the vectorized numpy implementation through :data:`USE_NUMBA`.
"""

import os

_FLAG = "GLMQS_DISABLE_JIT"


def _disabled_by_env():
    return os.environ.get(_FLAG, "0").strip().lower() not in ("", "0", "false", "no")


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    _numba = None

USE_NUMBA = _numba is not None and not _disabled_by_env()


def jit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if USE_NUMBA:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda func: func


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
