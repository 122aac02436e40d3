"""Optional numba acceleration.

Set ``TAPKIT_DISABLE_JIT=1`` to force the pure-numpy kernels. Numba is also
skipped silently when it cannot be imported.
"""
import os

try:
    from numba import njit as _njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _njit = None
    HAVE_NUMBA = False

JIT_DISABLED = os.environ.get("TAPKIT_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes")
USE_JIT = HAVE_NUMBA and not JIT_DISABLED


def optional_njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise.

    Decorated functions are always compiled when numba exists, regardless of
    the env flag, so the benchmark can compare both paths in one process.
    """
    kwargs.setdefault("cache", True)
    if len(args) == 1 and callable(args[0]) and not kwargs.keys() - {"cache"}:
        return optional_njit(**kwargs)(args[0])

    def decorator(func):
        if HAVE_NUMBA:
            return _njit(*args, **kwargs)(func)
        return func

    return decorator
