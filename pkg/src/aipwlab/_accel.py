"""JIT switch for the hot kernels.

Set ``AIPWLAB_DISABLE_NUMBA=1`` to force the pure-numpy code paths, e.g. to
debug a kernel or to run where numba is unavailable.
"""
from __future__ import annotations

import os

_DISABLED = os.getenv("AIPWLAB_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("disabled by AIPWLAB_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        """No-op stand-in for ``numba.njit``."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrapper(f):
            return f

        return wrapper


def use_numba() -> bool:
    return HAVE_NUMBA
