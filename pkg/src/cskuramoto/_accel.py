"""Optional numba acceleration.

Set ``CSKURAMOTO_PURE_NUMPY=1`` to force the pure-numpy code paths even when
numba is importable. Both paths compute the same sums; only the reduction
order differs, so results agree to rounding.
"""
import os

PURE_NUMPY_ENV = "CSKURAMOTO_PURE_NUMPY"

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get(PURE_NUMPY_ENV, "0") not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or the identity when numba is absent."""
    kwargs.setdefault("cache", True)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
