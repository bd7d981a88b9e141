# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled bit kernels: packing, index conversion, pairwise Hamming distance.

Mirrors bitgen.bitops._fallback; selected automatically at import when built.
"""

import numpy as np

BACKEND = "cython"

cdef unsigned char[256] _POP

cdef void _init_popcount() noexcept:
    cdef int i, v, c
    for i in range(256):
        v = i
        c = 0
        while v:
            c += v & 1
            v >>= 1
        _POP[i] = <unsigned char> c

_init_popcount()


def pack_bits(bits):
    arr = np.ascontiguousarray(bits, dtype=np.int8)
    lead = arr.shape[:arr.ndim - 1]
    cdef Py_ssize_t k = arr.shape[arr.ndim - 1]
    cdef Py_ssize_t nbytes = (k + 7) // 8
    flat = arr.reshape(-1, k)
    cdef Py_ssize_t n = flat.shape[0]
    out = np.zeros((n, nbytes), dtype=np.uint8)
    cdef const signed char[:, ::1] src = flat
    cdef unsigned char[:, ::1] dst = out
    cdef Py_ssize_t i, j
    cdef unsigned char bit
    for i in range(n):
        for j in range(k):
            # branchless: {-1,+1} -> {0,1} via (x + 1) >> 1
            bit = <unsigned char> ((src[i, j] + 1) >> 1)
            dst[i, j >> 3] |= bit << (7 - (j & 7))
    return out.reshape(lead + (nbytes,))


def unpack_bits(packed, num_bits):
    arr = np.ascontiguousarray(packed, dtype=np.uint8)
    lead = arr.shape[:arr.ndim - 1]
    cdef Py_ssize_t k = num_bits
    flat = arr.reshape(-1, arr.shape[arr.ndim - 1])
    cdef Py_ssize_t n = flat.shape[0]
    out = np.empty((n, k), dtype=np.int8)
    cdef const unsigned char[:, ::1] src = flat
    cdef signed char[:, ::1] dst = out
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(k):
            dst[i, j] = <signed char> (
                (((src[i, j >> 3] >> (7 - (j & 7))) & 1) << 1) - 1)
    return out.reshape(lead + (k,))


def bits_to_indices(bits):
    arr = np.ascontiguousarray(bits, dtype=np.int8)
    lead = arr.shape[:arr.ndim - 1]
    cdef Py_ssize_t k = arr.shape[arr.ndim - 1]
    flat = arr.reshape(-1, k)
    cdef Py_ssize_t n = flat.shape[0]
    out = np.empty(n, dtype=np.int64)
    cdef const signed char[:, ::1] src = flat
    cdef long long[::1] dst = out
    cdef Py_ssize_t i, j
    cdef long long v
    for i in range(n):
        v = 0
        for j in range(k):
            v = (v << 1) | <long long> ((src[i, j] + 1) >> 1)
        dst[i] = v
    return out.reshape(lead)


def indices_to_bits(indices, num_bits):
    arr = np.ascontiguousarray(indices, dtype=np.int64)
    lead = arr.shape
    cdef Py_ssize_t k = num_bits
    flat = arr.reshape(-1)
    cdef Py_ssize_t n = flat.shape[0]
    out = np.empty((n, k), dtype=np.int8)
    cdef const long long[::1] src = flat
    cdef signed char[:, ::1] dst = out
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(k):
            dst[i, j] = <signed char> ((((src[i] >> (k - 1 - j)) & 1) << 1) - 1)
    return out.reshape(lead + (k,))


def hamming_matrix(a_packed, b_packed):
    a = np.ascontiguousarray(a_packed, dtype=np.uint8)
    b = np.ascontiguousarray(b_packed, dtype=np.uint8)
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t nbytes = a.shape[1]
    out = np.empty((m, n), dtype=np.int64)
    cdef const unsigned char[:, ::1] av = a
    cdef const unsigned char[:, ::1] bv = b
    cdef long long[:, ::1] ov = out
    cdef Py_ssize_t i, j, t
    cdef long long acc
    for i in range(m):
        for j in range(n):
            acc = 0
            for t in range(nbytes):
                acc += _POP[av[i, t] ^ bv[j, t]]
            ov[i, j] = acc
    return out
