"""Pure numpy implementations of the hot kernels.

Same contracts as the compiled ``_ckernels`` module. The half-precision codec
works on raw float64 bit patterns rather than ``astype(np.float16)`` so that
numpy's own conversion stays usable as an independent test oracle.
"""
import numpy as np


def fp16_encode_array(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    bits = x.view(np.uint64)
    hs = ((bits >> np.uint64(63)) << np.uint64(15)).astype(np.int64)
    e = ((bits >> np.uint64(52)) & np.uint64(0x7FF)).astype(np.int64)
    mant = bits & np.uint64(0xFFFFFFFFFFFFF)

    E = e - 1023
    shift = np.where(E >= -14, 42, 42 + (-14 - E))
    # beyond 63 the significand (< 2**53) rounds to zero either way
    shift = np.clip(shift, 1, 63).astype(np.uint64)
    sig = mant | np.uint64(1 << 52)
    n = sig >> shift
    rem = sig & ((np.uint64(1) << shift) - np.uint64(1))
    half = np.uint64(1) << (shift - np.uint64(1))
    up = (rem > half) | ((rem == half) & ((n & np.uint64(1)) == np.uint64(1)))
    n = n.astype(np.int64) + up
    h = np.where(E >= -14, ((E + 15) << 10) + n - 1024, n)
    h = np.minimum(h, 0x7C00)

    # special classes, in increasing priority
    h = np.where(E > 15, 0x7C00, h)
    h = np.where(e == 0, 0, h)
    h = np.where(e == 0x7FF, np.where(mant != 0, 0x7E00, 0x7C00), h)
    return (hs | h).astype(np.uint16)


def fp16_decode_array(b):
    b = np.ascontiguousarray(b, dtype=np.uint16).astype(np.int64)
    e = (b >> 10) & 0x1F
    m = b & 0x3FF
    with np.errstate(invalid="ignore"):
        v = np.where(
            e == 0,
            np.ldexp(m.astype(np.float64), -24),
            np.ldexp((m + 1024).astype(np.float64), (e - 25).astype(np.int32)),
        )
        v = np.where(e == 31, np.where(m == 0, np.inf, np.nan), v)
    return np.where(b >> 15, -v, v)


def qmatmul_acc(a, b, za, zb):
    a = np.asarray(a, dtype=np.int64) - np.asarray(za, dtype=np.int64)[:, None]
    b = np.asarray(b, dtype=np.int64) - np.asarray(zb, dtype=np.int64)[None, :]
    return (a @ b).astype(np.int32)


def qconv2d_acc(x, w, zx, zw, stride, padding):
    x = np.asarray(x, dtype=np.int64) - int(zx)
    w = np.asarray(w, dtype=np.int64) - np.asarray(zw, dtype=np.int64)[:, None, None, None]
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    C, H, W = x.shape
    O, _, KH, KW = w.shape
    HO = (H - KH) // stride + 1
    WO = (W - KW) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (KH, KW), axis=(1, 2))
    windows = windows[:, ::stride, ::stride][:, :HO, :WO]
    out = np.einsum("chwij,ocij->ohw", windows, w)
    return out.astype(np.int32)
