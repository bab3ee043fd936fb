"""Backend selection for the hot labeling kernels.

Set ``PERCDETECT_DISABLE_NUMBA=1`` to force the vectorized numpy path even
when numba is importable. The choice is made once, at import time.
"""

import os

_FLAG = os.environ.get("PERCDETECT_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, otherwise the identity.

    The decorated function is compiled whenever numba is importable, even if
    the env flag disables it, so both paths stay testable side by side.
    """
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)
