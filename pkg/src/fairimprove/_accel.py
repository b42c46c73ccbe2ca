"""Backend switch for the numeric kernels.

Kernels are compiled with numba when it is importable, unless the
environment variable ``FAIRIMPROVE_DISABLE_NUMBA`` is set to a truthy value,
in which case the pure-numpy implementations are used. The flag is read once
at import time.
"""

import os

_FLAG = "FAIRIMPROVE_DISABLE_NUMBA"


def _numba_requested():
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _numba_requested()


def njit(fn):
    """Compile ``fn`` in nopython mode, or return ``None`` without numba."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(fn)


def backend():
    return "numba" if USE_NUMBA else "numpy"
