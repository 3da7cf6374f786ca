"""Kernel selection: the compiled extension when built, else pure Python.

Set ``PERTURBMAP_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
maxflow = _fallback.maxflow
mplp = _fallback.mplp

if os.environ.get("PERTURBMAP_PURE_PYTHON") != "1":
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        maxflow = _kernels.maxflow
        mplp = _kernels.mplp

__all__ = ["BACKEND", "maxflow", "mplp"]
