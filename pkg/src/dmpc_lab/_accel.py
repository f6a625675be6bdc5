"""Optional numba acceleration.

Hot kernels are written once in numba-compatible numpy and decorated with
:func:`kernel`. Set ``DMPC_LAB_NUMBA=0`` to run the plain Python/numpy path
(useful for debugging and for the benchmark that compares both).
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("DMPC_LAB_NUMBA", "1").strip().lower()
_REQUESTED = _FLAG not in ("0", "false", "no", "off")

try:
    if not _REQUESTED:
        raise ImportError
    import numba as _numba

    HAS_NUMBA = True
except ImportError:
    _numba = None
    HAS_NUMBA = False

USE_NUMBA = _REQUESTED and HAS_NUMBA


def kernel(fn):
    """Compile ``fn`` with ``numba.njit`` when enabled, else return it unchanged.

    The undecorated Python function stays reachable as ``fn.py_func`` in both
    modes so the benchmark can call either path explicitly.
    """
    if USE_NUMBA:
        jitted = _numba.njit(cache=True, nogil=True)(fn)
        return jitted
    fn.py_func = fn
    return fn


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
