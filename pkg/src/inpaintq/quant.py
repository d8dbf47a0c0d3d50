"""Affine INT8 quantization and integer-accumulating linear algebra.

    q  = clip(round(w / s) + z, -128, 127)      round = ties-to-even
    w' = s * (q - z)

Kernels accumulate ``(q_a - z_a) * (q_b - z_b)`` in int32 and apply the scale
product once at the end, so results equal float64 arithmetic on the
dequantized operands whenever that arithmetic is itself exact (e.g. dyadic
scales).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    AccumulatorOverflow,
    DegenerateRange,
    InvalidRange,
    NonFinite,
    ShapeMismatch,
)
from .tensor import Tensor, as_array, read_blob, write_blob

QMIN, QMAX = -128, 127
INT32_MAX = 2**31 - 1
MAX_INNER_DIM = 2**16


def clip(x, a, b):
    if a > b:
        raise InvalidRange(f"clip range [{a}, {b}] is empty")
    return np.maximum(a, np.minimum(b, x)) if isinstance(x, np.ndarray) else max(a, min(b, x))


@dataclass(frozen=True)
class QuantParams:
    """Scale and zero-point; ``axis=None`` is per-tensor, otherwise per-channel along ``axis``."""

    scale: float | np.ndarray
    zero_point: int | np.ndarray
    axis: int | None = None

    def __post_init__(self):
        s = np.asarray(self.scale, dtype=np.float64)
        z = np.asarray(self.zero_point)
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise InvalidRange(f"scale must be positive and finite, got {self.scale}")
        if np.any(z != np.round(z)) or np.any(z < QMIN) or np.any(z > QMAX):
            raise InvalidRange(f"zero point must be an integer in [-128, 127], got {self.zero_point}")
        if self.axis is None and (s.ndim or z.ndim):
            raise InvalidRange("per-tensor params need scalar scale and zero point")
        if self.axis is not None and s.shape != z.shape:
            raise InvalidRange("per-channel scale and zero point lengths differ")

    @property
    def granularity(self) -> str:
        return "per-tensor" if self.axis is None else f"per-channel({self.axis})"

    def channels(self) -> int:
        return 1 if self.axis is None else int(np.asarray(self.scale).size)

    def broadcast(self, ndim: int) -> tuple[np.ndarray, np.ndarray]:
        """Scale and zero point shaped to broadcast against an ``ndim`` array."""
        s = np.asarray(self.scale, dtype=np.float64)
        z = np.asarray(self.zero_point, dtype=np.int64)
        if self.axis is None:
            return s, z
        shape = [1] * ndim
        shape[self.axis] = s.size
        return s.reshape(shape), z.reshape(shape)

    def to_json(self) -> dict:
        s = np.asarray(self.scale, dtype=np.float64)
        z = np.asarray(self.zero_point, dtype=np.int64)
        return {
            "s": s.tolist(),
            "z": z.tolist(),
            "granularity": "per-tensor" if self.axis is None else "per-channel",
            "axis": self.axis,
        }

    @classmethod
    def from_json(cls, d: dict) -> "QuantParams":
        axis = d.get("axis")
        if axis is None:
            return cls(float(d["s"]), int(d["z"]))
        return cls(np.asarray(d["s"], dtype=np.float64), np.asarray(d["z"], dtype=np.int64), int(axis))


@dataclass(frozen=True)
class QuantizedTensor:
    payload: np.ndarray
    params: QuantParams
    shape: tuple[int, ...] = field(default=())

    def __post_init__(self):
        p = np.asarray(self.payload)
        if p.dtype != np.int8:
            if np.any(p < QMIN) or np.any(p > QMAX):
                raise InvalidRange("payload outside int8 range")
            p = p.astype(np.int8)
        shape = tuple(self.shape) or p.shape
        p = np.array(p.reshape(shape))
        p.flags.writeable = False
        object.__setattr__(self, "payload", p)
        object.__setattr__(self, "shape", shape)

    @property
    def nbytes(self) -> int:
        return self.payload.nbytes

    def save(self, path):
        header = {"shape": list(self.shape), **self.params.to_json()}
        write_blob(path, header, self.payload.tobytes())

    @classmethod
    def load(cls, path) -> "QuantizedTensor":
        header, payload = read_blob(path)
        q = np.frombuffer(payload, dtype=np.int8)
        return cls(q, QuantParams.from_json(header), tuple(header["shape"]))


def _range(values: np.ndarray, scheme: str, percentile: float, axis):
    reduce_axes = None if axis is None else tuple(i for i in range(values.ndim) if i != axis)
    if scheme == "minmax":
        return values.min(axis=reduce_axes), values.max(axis=reduce_axes)
    if scheme == "percentile":
        lo = np.percentile(values, 100.0 - percentile, axis=reduce_axes)
        hi = np.percentile(values, percentile, axis=reduce_axes)
        return lo, hi
    raise ValueError(f"unknown calibration scheme {scheme!r}")


def calibrate(
    values,
    scheme: str = "minmax",
    symmetry: str = "symmetric",
    percentile: float = 99.99,
    axis: int | None = None,
) -> QuantParams:
    """Fit INT8 params to observed values.

    Symmetric: ``s = max(|lo|, |hi|) / 127``, ``z = 0``.
    Asymmetric: ``[lo, hi]`` (widened to contain 0) maps onto ``[-128, 127]``
    with ``s = (hi - lo) / 255`` and ``z = round(-128 - lo / s)``.
    """
    v = as_array(values)
    if v.size == 0:
        raise DegenerateRange("cannot calibrate an empty tensor")
    if not np.all(np.isfinite(v)):
        raise NonFinite("calibration values must be finite")
    lo, hi = _range(v, scheme, percentile, axis)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if np.any(hi == lo):
        raise DegenerateRange("calibration range has zero width")
    if symmetry == "symmetric":
        s = np.maximum(np.abs(lo), np.abs(hi)) / 127.0
        z = np.zeros_like(s, dtype=np.int64)
    elif symmetry == "asymmetric":
        lo = np.minimum(lo, 0.0)
        hi = np.maximum(hi, 0.0)
        s = (hi - lo) / 255.0
        z = np.clip(np.rint(QMIN - lo / s), QMIN, QMAX).astype(np.int64)
    else:
        raise ValueError(f"unknown symmetry {symmetry!r}")
    if axis is None:
        return QuantParams(float(s), int(z))
    return QuantParams(s, z, axis)


def quantize(w, params: QuantParams) -> QuantizedTensor:
    arr = as_array(w)
    if params.axis is not None and arr.shape[params.axis] != params.channels():
        raise ShapeMismatch(
            f"axis {params.axis} has {arr.shape[params.axis]} channels, params have {params.channels()}"
        )
    s, z = params.broadcast(arr.ndim)
    q = np.clip(np.rint(arr / s) + z, QMIN, QMAX).astype(np.int8)
    return QuantizedTensor(q, params, arr.shape)


def dequantize_array(q: QuantizedTensor) -> np.ndarray:
    s, z = q.params.broadcast(q.payload.ndim)
    return s * (q.payload.astype(np.int64) - z)


def dequantize(q: QuantizedTensor) -> Tensor:
    return Tensor(dequantize_array(q))


def fake_quantize(w, params: QuantParams) -> np.ndarray:
    return dequantize_array(quantize(w, params))


def qat_total_loss(task_loss: float, w, w_hat, lam: float) -> float:
    """Task loss plus ``lam * ||w - w_hat||^2``."""
    a, b = as_array(w), as_array(w_hat)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    d = (a - b).ravel()
    return float(task_loss + lam * np.dot(d, d))


def _per_index(params: QuantParams, n: int, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Scale/zero vectors of length n for a 2-D operand indexed along ``axis``."""
    if params.axis is None:
        return (
            np.full(n, float(params.scale)),
            np.full(n, int(params.zero_point), dtype=np.int32),
        )
    if params.axis != axis:
        raise ShapeMismatch(f"per-channel params must lie on axis {axis} for this operand")
    return (
        np.asarray(params.scale, dtype=np.float64),
        np.asarray(params.zero_point, dtype=np.int32),
    )


def _check_accumulator(inner: int, a_span: int, b_span: int):
    if inner > MAX_INNER_DIM:
        raise AccumulatorOverflow(f"inner dimension {inner} exceeds {MAX_INNER_DIM}")
    if inner * a_span * b_span > INT32_MAX:
        raise AccumulatorOverflow(
            f"worst-case accumulation {inner}*{a_span}*{b_span} exceeds int32"
        )


def qmatmul(a: QuantizedTensor, b: QuantizedTensor) -> Tensor:
    """``dequantize(a) @ dequantize(b)`` computed with int32 accumulation.

    ``a`` may be per-channel along rows (axis 0), ``b`` along columns (axis 1).
    """
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeMismatch("qmatmul operands must be 2-D")
    (m, k), (k2, n) = a.shape, b.shape
    if k != k2:
        raise ShapeMismatch(f"inner dimensions differ: {a.shape} @ {b.shape}")
    sa, za = _per_index(a.params, m, 0)
    sb, zb = _per_index(b.params, n, 1)
    a_span = int(np.max(np.abs(a.payload.astype(np.int32) - za[:, None]), initial=0))
    b_span = int(np.max(np.abs(b.payload.astype(np.int32) - zb[None, :]), initial=0))
    _check_accumulator(k, a_span, b_span)
    acc = kernels.qmatmul_acc(
        np.ascontiguousarray(a.payload), np.ascontiguousarray(b.payload), za, zb
    )
    return Tensor((sa[:, None] * sb[None, :]) * acc)


def qconv2d(x: QuantizedTensor, kernel: QuantizedTensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a (C, H, W) input with an (O, C, KH, KW) kernel.

    The input must be per-tensor; the kernel may be per-channel along axis 0.
    Padding is zero in the real domain.
    """
    if x.params.axis is not None:
        raise ShapeMismatch("qconv2d input must use per-tensor params")
    xs = x.shape if len(x.shape) == 3 else (1, *x.shape)
    if len(xs) != 3 or len(kernel.shape) != 4:
        raise ShapeMismatch("expected (C, H, W) input and (O, C, KH, KW) kernel")
    c, h, w = xs
    o, c2, kh, kw = kernel.shape
    if c != c2:
        raise ShapeMismatch(f"input has {c} channels, kernel expects {c2}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeMismatch("kernel larger than padded input")
    if kernel.params.axis is None:
        sk = np.full(o, float(kernel.params.scale))
        zk = np.full(o, int(kernel.params.zero_point), dtype=np.int32)
    elif kernel.params.axis == 0:
        sk = np.asarray(kernel.params.scale, dtype=np.float64)
        zk = np.asarray(kernel.params.zero_point, dtype=np.int32)
    else:
        raise ShapeMismatch("per-channel kernel params must lie on axis 0")
    zx = int(x.params.zero_point)
    payload = np.ascontiguousarray(x.payload.reshape(xs))
    x_span = int(np.max(np.abs(payload.astype(np.int32) - zx)))
    k_span = int(np.max(np.abs(kernel.payload.astype(np.int32) - zk[:, None, None, None])))
    _check_accumulator(c * kh * kw, x_span, k_span)
    acc = kernels.qconv2d_acc(payload, np.ascontiguousarray(kernel.payload), zx, zk, stride, padding)
    return Tensor((float(x.params.scale) * sk)[:, None, None] * acc)
