"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
twin.  Setting ``JSSLAB_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py as python_backend

try:
    from . import _bnb as cython_backend
except ImportError:  # extension not built
    cython_backend = None

if cython_backend is not None and not os.environ.get("JSSLAB_PURE_PYTHON"):
    backend = cython_backend
    BACKEND = "cython"
else:
    backend = python_backend
    BACKEND = "python"

bnb_solve = backend.bnb_solve
simulate_order = backend.simulate_order

__all__ = ["BACKEND", "bnb_solve", "simulate_order", "python_backend", "cython_backend"]
