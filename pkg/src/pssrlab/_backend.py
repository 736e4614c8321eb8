"""Kernel backend selection.

``PSSRLAB_BACKEND`` picks the implementation: ``native`` (compiled, error if
missing), ``python`` (numpy reference) or ``auto`` (default: native when
importable).
"""
import os

from . import _kernels_py

_choice = os.environ.get("PSSRLAB_BACKEND", "auto").lower()

if _choice not in ("auto", "native", "python"):
    raise ImportError(f"PSSRLAB_BACKEND must be auto, native or python, got {_choice!r}")

_native = None
if _choice != "python":
    try:
        from . import _ckernels as _native
    except ImportError:
        if _choice == "native":
            raise

kernels = _native if _native is not None else _kernels_py
BACKEND = "native" if _native is not None else "python"

im2col = kernels.im2col
col2im = kernels.col2im
sad_disparity = kernels.sad_disparity
