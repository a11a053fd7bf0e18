"""Kernel backend selection.

The compiled extension is used when importable; otherwise the numpy
fallback engages.  FEDBALANCE_BACKEND=python|compiled forces a choice
(compiled raises if the extension is missing).
"""

from __future__ import annotations

import os

from . import numpy_backend

_choice = os.environ.get("FEDBALANCE_BACKEND", "auto").strip().lower()

if _choice in ("auto", "", "compiled"):
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = numpy_backend
        BACKEND = "python"
elif _choice == "python":
    _impl = numpy_backend
    BACKEND = "python"
else:
    raise ValueError(f"unknown FEDBALANCE_BACKEND value: {_choice!r}")

conv3x3_forward = _impl.conv3x3_forward
conv3x3_backward = _impl.conv3x3_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
warp_bilinear = _impl.warp_bilinear
sepconv2d_clamp = _impl.sepconv2d_clamp

__all__ = [
    "BACKEND",
    "conv3x3_forward",
    "conv3x3_backward",
    "maxpool2_forward",
    "maxpool2_backward",
    "warp_bilinear",
    "sepconv2d_clamp",
    "numpy_backend",
]
