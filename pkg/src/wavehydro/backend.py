"""Kernel backend selection.

The compiled extension is preferred when importable; the NumPy module is the
fallback and the semantic reference. Set ``WAVEHYDRO_FORCE_NUMPY=1`` to force
the fallback (used by the equivalence tests and the benchmark).
"""

from __future__ import annotations

import os

from . import _kernels_np

_impl = _kernels_np
if not os.environ.get("WAVEHYDRO_FORCE_NUMPY"):
    try:
        from . import _kernels as _compiled

        _impl = _compiled
    except ImportError:
        _impl = _kernels_np


def backend_name() -> str:
    return "compiled" if getattr(_impl, "IS_COMPILED", False) else "numpy"


def row_soft_disparity(FL, FR, validL=None, validR=None):
    return _impl.row_soft_disparity(FL, FR, validL, validR)


def attention_apply(F2, values, valid=None):
    return _impl.attention_apply(F2, values, valid)
