# cython: language_level=3
"""Compiled implementation of the hot kernels.

Single-pass C loops for bit packing/unpacking and affine code conversion.
Contract and bit layout are identical to tvq._kernels_np (LSB-first
bitstream, round-half-away-from-zero, saturating clamp); tests assert the
two backends agree bit-for-bit.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport copysign, trunc

cnp.import_array()

NAME = "compiled"


def pack_codes(const unsigned char[::1] codes, int bits):
    cdef Py_ssize_t n = codes.shape[0]
    if n == 0:
        return b""
    if bits == 8:
        return bytes(codes)
    cdef Py_ssize_t nbytes = (n * bits + 7) // 8
    out = bytearray(nbytes)
    cdef unsigned char[::1] buf = out
    cdef unsigned long long acc = 0
    cdef int nacc = 0
    cdef Py_ssize_t i, j = 0
    for i in range(n):
        acc |= (<unsigned long long> codes[i]) << nacc
        nacc += bits
        while nacc >= 8:
            buf[j] = <unsigned char> (acc & 0xFF)
            acc >>= 8
            nacc -= 8
            j += 1
    if nacc > 0:
        buf[j] = <unsigned char> (acc & 0xFF)
    return bytes(out)


def unpack_codes(const unsigned char[::1] packed, Py_ssize_t n, int bits):
    out = np.empty(n, dtype=np.uint8)
    if n == 0:
        return out
    cdef unsigned char[::1] dst = out
    if bits == 8:
        dst[:] = packed[:n]
        return out
    cdef unsigned long long acc = 0
    cdef int nacc = 0
    cdef unsigned long long mask = (1ULL << bits) - 1
    cdef Py_ssize_t i, j = 0
    for i in range(n):
        while nacc < bits:
            acc |= (<unsigned long long> packed[j]) << nacc
            nacc += 8
            j += 1
        dst[i] = <unsigned char> (acc & mask)
        acc >>= bits
        nacc -= bits
    return out


def quantize_codes(const double[::1] data, double scale, long zero_point, int bits):
    cdef Py_ssize_t n = data.shape[0]
    out = np.empty(n, dtype=np.uint8)
    cdef unsigned char[::1] dst = out
    cdef double maxcode = <double> ((1 << bits) - 1)
    cdef double scaled, rounded
    cdef Py_ssize_t i
    for i in range(n):
        scaled = data[i] / scale
        rounded = trunc(scaled + copysign(0.5, scaled)) + (<double> zero_point)
        if rounded < 0.0:
            rounded = 0.0
        elif rounded > maxcode:
            rounded = maxcode
        dst[i] = <unsigned char> rounded
    return out


def dequantize_codes(const unsigned char[::1] codes, double scale, long zero_point):
    cdef Py_ssize_t n = codes.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] dst = out
    cdef Py_ssize_t i
    for i in range(n):
        dst[i] = scale * ((<double> codes[i]) - (<double> zero_point))
    return out
