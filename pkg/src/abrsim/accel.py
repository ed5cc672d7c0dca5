"""Optional numba acceleration for the batch conformance kernels.

Set ``ABRSIM_DISABLE_NUMBA=1`` to force the pure-Python fallback path;
useful for debugging and for the numba-vs-fallback benchmark.
"""

import os

NUMBA_ENABLED = os.environ.get("ABRSIM_DISABLE_NUMBA", "") not in ("1", "true", "yes")

if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:
    def njit(*args, **kwargs):
        # Mirrors numba.njit usage: bare decorator or with options.
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap

__all__ = ["njit", "NUMBA_ENABLED"]
