"""Backend selection for the sequential attention scans.

The compiled extension is used when it imports; set ``MOMENTUM_ARCH_PURE=1``
to force the numpy implementation.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("MOMENTUM_ARCH_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

causal_linear_scan = _impl.causal_linear_scan
causal_momentum_scan = _impl.causal_momentum_scan
momentum_carry_scan = _impl.momentum_carry_scan

__all__ = ["BACKEND", "causal_linear_scan", "causal_momentum_scan", "momentum_carry_scan"]
