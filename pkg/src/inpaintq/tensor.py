"""Dense float64 tensors and bit-level single/half precision codecs.

Canonical compute precision is float64. FP32 and FP16 only appear as storage
formats that are applied explicitly (``round_to_fp32`` / ``round_to_fp16``).
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _alloc, kernels
from .errors import NonFinite, ShapeMismatch

_MAGIC = b"IQT1"


class Tensor:
    """Immutable n-dimensional float64 array.

    The buffer is copied on construction and marked read-only, so a Tensor can
    be shared freely across threads.
    """

    __slots__ = ("_array", "__weakref__")

    def __init__(self, data, shape=None):
        arr = np.array(data, dtype=np.float64)
        if shape is not None:
            shape = tuple(int(s) for s in shape)
            if math.prod(shape) != arr.size:
                raise ShapeMismatch(f"cannot view {arr.size} elements as {shape}")
            arr = arr.reshape(shape)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(s < 1 for s in arr.shape):
            raise ShapeMismatch(f"all extents must be >= 1, got {arr.shape}")
        arr.flags.writeable = False
        self._array = arr
        _alloc.register(self, arr.nbytes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def data(self) -> np.ndarray:
        """Flat read-only view of the elements."""
        return self._array.reshape(-1)

    @property
    def nbytes(self) -> int:
        return self._array.nbytes

    def numpy(self) -> np.ndarray:
        return self._array

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._array
        return self._array.astype(dtype)

    def __len__(self):
        return self._array.shape[0]

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def save(self, path):
        save_tensor(self, path)

    @classmethod
    def load(cls, path) -> "Tensor":
        return load_tensor(path)


def as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.numpy()
    return np.asarray(x, dtype=np.float64)


def write_blob(path, header: dict, payload: bytes):
    """Write ``magic | u32 header length | JSON header | payload`` (little-endian)."""
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(payload)


def read_blob(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a tensor file")
    (n,) = struct.unpack("<I", raw[4:8])
    return json.loads(raw[8 : 8 + n]), raw[8 + n :]


def save_tensor(t: Tensor, path):
    write_blob(path, {"shape": list(t.shape), "dtype": "<f8"}, t.numpy().astype("<f8").tobytes())


def load_tensor(path) -> Tensor:
    header, payload = read_blob(path)
    arr = np.frombuffer(payload, dtype=header.get("dtype", "<f8"))
    return Tensor(arr, header["shape"])


def load_csv(path) -> Tensor:
    """Load a small numeric CSV fixture as a 2-D tensor (no header)."""
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ShapeMismatch(f"{path}: ragged or empty CSV")
    return Tensor(rows)


# --- FP32 -------------------------------------------------------------------


@dataclass(frozen=True)
class Fp32Parts:
    sign: int
    exponent: int
    mantissa: int

    def value(self) -> float:
        # e == 0 is the zero/subnormal class, which has no implicit leading one
        if self.exponent == 0:
            mag = math.ldexp(self.mantissa, -149)
        else:
            mag = math.ldexp(1.0 + self.mantissa / 2**23, self.exponent - 127)
        return -mag if self.sign else mag


def fp32_decompose(x: float) -> Fp32Parts:
    """Split ``x`` (rounded to the nearest single) into sign, biased exponent and mantissa."""
    if not math.isfinite(x):
        raise NonFinite(f"cannot decompose {x!r}")
    try:
        (bits,) = struct.unpack("<I", struct.pack("<f", x))
    except OverflowError:
        raise NonFinite(f"{x!r} overflows single precision") from None
    return Fp32Parts(bits >> 31, (bits >> 23) & 0xFF, bits & 0x7FFFFF)


def round_to_fp32(x) -> np.ndarray:
    return as_array(x).astype(np.float32).astype(np.float64)


# --- FP16 -------------------------------------------------------------------


@dataclass(frozen=True)
class Fp16Bits:
    raw: int

    def __post_init__(self):
        if not 0 <= self.raw <= 0xFFFF:
            raise ValueError(f"not a 16-bit pattern: {self.raw}")

    @classmethod
    def from_fields(cls, sign: int, exponent: int, mantissa: int) -> "Fp16Bits":
        return cls((sign << 15) | (exponent << 10) | mantissa)

    @property
    def sign(self) -> int:
        return self.raw >> 15

    @property
    def exponent(self) -> int:
        return (self.raw >> 10) & 0x1F

    @property
    def mantissa(self) -> int:
        return self.raw & 0x3FF

    @property
    def is_nan(self) -> bool:
        return self.exponent == 31 and self.mantissa != 0


def fp16_encode(x: float) -> Fp16Bits:
    """Nearest half-precision pattern, ties to even; overflow saturates to infinity."""
    out = kernels.fp16_encode_array(np.array([x], dtype=np.float64))
    return Fp16Bits(int(out[0]))


def fp16_decode(b: Fp16Bits) -> float:
    """Exact value of a half-precision pattern (NaN patterns decode to ``nan``)."""
    raw = b.raw if isinstance(b, Fp16Bits) else int(b)
    return float(kernels.fp16_decode_array(np.array([raw], dtype=np.uint16))[0])


def fp16_encode_array(x) -> np.ndarray:
    arr = as_array(x)
    return kernels.fp16_encode_array(np.ascontiguousarray(arr.reshape(-1))).reshape(arr.shape)


def fp16_decode_array(bits) -> np.ndarray:
    b = np.asarray(bits, dtype=np.uint16)
    return kernels.fp16_decode_array(np.ascontiguousarray(b.reshape(-1))).reshape(b.shape)


def round_to_fp16(x) -> np.ndarray:
    """FP16 storage round-trip of a float64 array."""
    return fp16_decode_array(fp16_encode_array(x))


def round_to_precision(x, precision: str) -> np.ndarray:
    if precision == "fp32":
        return round_to_fp32(x)
    if precision == "fp16":
        return round_to_fp16(x)
    if precision == "fp64":
        return as_array(x)
    raise ValueError(f"unknown float storage precision {precision!r}")
