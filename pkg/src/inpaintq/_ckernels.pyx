# cython: language_level=3
"""Compiled kernels: half-precision bit codec and INT8 integer-accumulation GEMM/conv.

Signatures mirror :mod:`inpaintq._pykernels` exactly; callers go through
:mod:`inpaintq.kernels`, which picks whichever backend imported.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, NAN, ldexp
from libc.stdint cimport int8_t, int32_t, int64_t, uint16_t, uint64_t
from libc.string cimport memcpy

cdef uint64_t MANT_MASK = (<uint64_t>1 << 52) - 1

cnp.import_array()


cdef inline uint16_t _encode_one(double x) noexcept nogil:
    cdef uint64_t bits
    memcpy(&bits, &x, 8)
    cdef uint16_t hs = <uint16_t>((bits >> 63) << 15)
    cdef int e = <int>((bits >> 52) & 0x7FF)
    cdef uint64_t mant = bits & MANT_MASK
    if e == 0x7FF:
        if mant:
            return hs | 0x7E00
        return hs | 0x7C00
    if e == 0:
        return hs
    cdef int E = e - 1023
    if E > 15:
        return hs | 0x7C00
    cdef int shift = 42 if E >= -14 else 42 + (-14 - E)
    if shift > 53:
        return hs
    cdef uint64_t sig = mant | (<uint64_t>1 << 52)
    cdef uint64_t n = sig >> shift
    cdef uint64_t rem = sig & ((<uint64_t>1 << shift) - 1)
    cdef uint64_t half = <uint64_t>1 << (shift - 1)
    if rem > half or (rem == half and (n & 1)):
        n += 1
    cdef int64_t h
    if E >= -14:
        h = ((E + 15) << 10) + <int64_t>n - 1024
    else:
        h = <int64_t>n
    if h >= 0x7C00:
        h = 0x7C00
    return hs | <uint16_t>h


cdef inline double _decode_one(uint16_t b) noexcept nogil:
    cdef int e = (b >> 10) & 0x1F
    cdef int m = b & 0x3FF
    cdef double v
    if e == 0:
        v = ldexp(<double>m, -24)
    elif e == 31:
        v = INFINITY if m == 0 else NAN
    else:
        v = ldexp(<double>(m + 1024), e - 25)
    return -v if (b >> 15) else v


def fp16_encode_array(const double[::1] x):
    cdef Py_ssize_t i, n = x.shape[0]
    out = np.empty(n, dtype=np.uint16)
    cdef uint16_t[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _encode_one(x[i])
    return out


def fp16_decode_array(const uint16_t[::1] b):
    cdef Py_ssize_t i, n = b.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _decode_one(b[i])
    return out


def qmatmul_acc(const int8_t[:, ::1] a, const int8_t[:, ::1] b,
                const int32_t[::1] za, const int32_t[::1] zb):
    """int32 accumulation of (a - za[row]) @ (b - zb[col])."""
    cdef Py_ssize_t M = a.shape[0], K = a.shape[1], N = b.shape[1]
    cdef Py_ssize_t i, j, k
    cdef int32_t av
    out = np.zeros((M, N), dtype=np.int32)
    cdef int32_t[:, ::1] o = out
    with nogil:
        for i in range(M):
            for k in range(K):
                av = <int32_t>a[i, k] - za[i]
                if av == 0:
                    continue
                for j in range(N):
                    o[i, j] += av * (<int32_t>b[k, j] - zb[j])
    return out


def qconv2d_acc(const int8_t[:, :, ::1] x, const int8_t[:, :, :, ::1] w,
                int zx, const int32_t[::1] zw, int stride, int padding):
    """int32 cross-correlation of (x - zx) with (w - zw[out_channel]); zero padding in real domain."""
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t HO = (H + 2 * padding - KH) // stride + 1
    cdef Py_ssize_t WO = (W + 2 * padding - KW) // stride + 1
    cdef Py_ssize_t o, c, oy, ox, ky, kx, iy, ix
    cdef int32_t acc, zo
    out = np.zeros((O, HO, WO), dtype=np.int32)
    cdef int32_t[:, :, ::1] res = out
    with nogil:
        for o in range(O):
            zo = zw[o]
            for oy in range(HO):
                for ox in range(WO):
                    acc = 0
                    for c in range(C):
                        for ky in range(KH):
                            iy = oy * stride + ky - padding
                            if iy < 0 or iy >= H:
                                continue
                            for kx in range(KW):
                                ix = ox * stride + kx - padding
                                if ix < 0 or ix >= W:
                                    continue
                                acc = acc + (<int32_t>x[c, iy, ix] - zx) * (<int32_t>w[o, c, ky, kx] - zo)
                    res[o, oy, ox] = acc
    return out
