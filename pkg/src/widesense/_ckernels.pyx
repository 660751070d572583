# cython: language_level=3
"""Compiled kernels. Mirrors :mod:`widesense._pykernels` bit-for-bit."""

from libc.stdint cimport uint64_t

cdef uint64_t _POLY = 0xC96C5795D7870F42ULL
cdef uint64_t _TABLE[256]


cdef void _build_table():
    cdef int i, j
    cdef uint64_t c
    for i in range(256):
        c = i
        for j in range(8):
            if c & 1:
                c = (c >> 1) ^ _POLY
            else:
                c >>= 1
        _TABLE[i] = c


_build_table()


def crc64(const unsigned char[::1] data, uint64_t crc=0):
    """CRC-64/XZ of ``data``; pass a previous result as ``crc`` to continue it."""
    cdef uint64_t c = ~crc
    cdef Py_ssize_t i, n = data.shape[0]
    with nogil:
        for i in range(n):
            c = _TABLE[(c ^ data[i]) & 0xFF] ^ (c >> 8)
    return ~c
