"""Backend selection for the compiled kernels.

Set ``FIDSEL_DISABLE_NUMBA=1`` to force the pure-numpy code paths.  The flag
is read once at import; ``USE_NUMBA`` may also be flipped at runtime (tests
do this) because every public entry point dispatches on it per call.
"""

import os

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    numba = None
    NUMBA_AVAILABLE = False

_DISABLED = os.environ.get("FIDSEL_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


def jit(func):
    """``numba.njit(cache=True)`` when numba is importable, else the identity."""
    if NUMBA_AVAILABLE:
        return numba.njit(cache=True, nogil=True)(func)
    return func


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
