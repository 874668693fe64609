"""Hot loops behind one dispatch point.

The numba path is used when numba imports cleanly and ``SMELTER_NUMBA`` is not
set to ``0``; otherwise the pure-numpy path runs. Both modules stay importable
so tests and the benchmark can compare them directly.
"""
import os

from . import _numpy as numpy_impl

try:
    from . import _numba as numba_impl
except ImportError:  # numba missing or broken
    numba_impl = None

USE_NUMBA = numba_impl is not None and os.environ.get("SMELTER_NUMBA", "1") != "0"
backend = numba_impl if USE_NUMBA else numpy_impl
BACKEND_NAME = "numba" if USE_NUMBA else "numpy"

im2col = backend.im2col
col2im = backend.col2im
maxpool2x2 = backend.maxpool2x2
maxpool2x2_backward = backend.maxpool2x2_backward
warp_bilinear = backend.warp_bilinear
convolve_rows = backend.convolve_rows

__all__ = [
    "BACKEND_NAME",
    "USE_NUMBA",
    "col2im",
    "convolve_rows",
    "im2col",
    "maxpool2x2",
    "maxpool2x2_backward",
    "numba_impl",
    "numpy_impl",
    "warp_bilinear",
]
