"""Kernel dispatch: compiled extension when available, numpy fallback otherwise.

Set ``T2SCREEN_PURE_PYTHON=1`` to force the fallback (used by the benchmark
and the kernel-parity tests).
"""

from __future__ import annotations

import os

from . import kernels_py

try:
    from . import _kernels  # compiled extension

    HAVE_COMPILED = True
except ImportError:  # pragma: no cover - depends on build environment
    _kernels = None
    HAVE_COMPILED = False

USE_COMPILED = HAVE_COMPILED and not os.environ.get("T2SCREEN_PURE_PYTHON")


def backend_name() -> str:
    return "compiled" if USE_COMPILED else "python"


def hahn_echo_batch(h0, h1, tau_ms):
    if USE_COMPILED:
        import numpy as np

        return _kernels.hahn_echo_batch(
            np.ascontiguousarray(h0, dtype=complex),
            np.ascontiguousarray(h1, dtype=complex),
            np.ascontiguousarray(tau_ms, dtype=float),
        )
    return kernels_py.hahn_echo_batch(h0, h1, tau_ms)
