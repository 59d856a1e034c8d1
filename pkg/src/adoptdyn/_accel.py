# Use numba when available and not disabled; otherwise run the numpy paths.
#
# Set ADOPTDYN_DISABLE_NUMBA=1 before import to force the pure-numpy kernels
# (useful for debugging and for the backend comparison benchmark).

import logging
import os

logger = logging.getLogger(__name__)

_DISABLED = os.environ.get("ADOPTDYN_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("disabled by ADOPTDYN_DISABLE_NUMBA")
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError as exc:
    NUMBA_AVAILABLE = False
    logger.debug("numba kernels unavailable (%s); using numpy fallback", exc)

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap


def backend():
    return "numba" if NUMBA_AVAILABLE else "numpy"
