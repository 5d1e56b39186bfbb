"""Selects the statevector kernel implementation at import time.

The compiled extension is preferred. Set ``QADV_PURE_PYTHON=1`` to force the
numpy fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fallback

try:
    from . import _kernels
    HAVE_CYTHON = True
except ImportError:
    _kernels = None
    HAVE_CYTHON = False

BACKEND = "python"
_impl = _fallback

if HAVE_CYTHON and os.environ.get("QADV_PURE_PYTHON", "") not in ("1", "true", "yes"):
    _impl = _kernels
    BACKEND = "cython"


def simulate_batch(n_qubits: int, kinds, targets, controls, angles, backend: str | None = None):
    """Simulate ``len(angles)`` instances of one circuit structure from |0...0>.

    ``backend`` overrides the import-time choice ("cython" or "python").
    """
    impl = _impl
    if backend == "python":
        impl = _fallback
    elif backend == "cython":
        if not HAVE_CYTHON:
            raise ImportError("the compiled extension is not built")
        impl = _kernels
    return impl.simulate_batch(
        int(n_qubits),
        np.ascontiguousarray(kinds, dtype=np.int8),
        np.ascontiguousarray(targets, dtype=np.intc),
        np.ascontiguousarray(controls, dtype=np.intc),
        np.ascontiguousarray(np.atleast_2d(angles), dtype=np.float64),
    )
