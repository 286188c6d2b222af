"""Switch between numba-compiled kernels and their numpy fallbacks.

Set ``THREEDP_NO_JIT=1`` to force the pure-numpy path. When numba is not
importable the fallback is used automatically.
"""

from __future__ import annotations

import os

try:
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

HAS_NUMBA = _numba is not None


def jit_enabled() -> bool:
    if not HAS_NUMBA:
        return False
    return os.environ.get("THREEDP_NO_JIT", "0").lower() in ("", "0", "false", "no")


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
