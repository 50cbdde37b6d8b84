"""Backend selection for the numeric kernels.

Set POLARMESH_DISABLE_NUMBA=1 before import to skip JIT compilation and
run the pure-numpy fallback path. The choice is made once per process.
"""

import os

USE_NUMBA = os.environ.get("POLARMESH_DISABLE_NUMBA", "").lower() not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if USE_NUMBA:
    def kernel(func):
        return _njit(cache=True, fastmath=False)(func)
else:
    def kernel(func):
        return func
