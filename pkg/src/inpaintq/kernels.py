"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``INPAINTQ_PURE_PYTHON=1`` to force the fallback (benchmarks and parity
tests import both modules directly).
"""
import os

from . import _pykernels

if os.environ.get("INPAINTQ_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

fp16_encode_array = _impl.fp16_encode_array
fp16_decode_array = _impl.fp16_decode_array
qmatmul_acc = _impl.qmatmul_acc
qconv2d_acc = _impl.qconv2d_acc

__all__ = [
    "BACKEND",
    "fp16_encode_array",
    "fp16_decode_array",
    "qmatmul_acc",
    "qconv2d_acc",
]
