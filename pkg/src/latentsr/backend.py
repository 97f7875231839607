"""Selects the numerical kernel backend at import time.

Prefers the compiled Cython extension; falls back to the pure-numpy module
when the extension is missing or ``LATENTSR_PURE_PY=1`` is set. Everything
downstream imports ``kernels`` from here and never touches the twins
directly, so the choice is made exactly once per process.
"""

from __future__ import annotations

import os

from . import _kernels_py

kernels = _kernels_py
if os.environ.get("LATENTSR_PURE_PY", "") != "1":
    try:
        from . import _kernels_cy as _ext

        kernels = _ext
    except ImportError:
        pass


def backend_name() -> str:
    """Either \"cython\" or \"python\"."""
    return kernels.BACKEND_NAME


def extension_available() -> bool:
    return kernels.BACKEND_NAME == "cython"
