# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled xnor/popcount kernels over row-major uint64 bit rows.

Rows are zero padded past the logical width, so xor of two padded rows has
no stray bits and popcount(xnor & mask) == k - popcount(xor).
"""

import numpy as np

from libc.stdint cimport int32_t, int64_t, uint64_t


cdef extern from *:
    """
    #if defined(__GNUC__) || defined(__clang__)
    #define BIBIT_POPCNT(x) __builtin_popcountll(x)
    #else
    static inline int BIBIT_POPCNT(unsigned long long x) {
        x = x - ((x >> 1) & 0x5555555555555555ULL);
        x = (x & 0x3333333333333333ULL) + ((x >> 2) & 0x3333333333333333ULL);
        x = (x + (x >> 4)) & 0x0F0F0F0F0F0F0F0FULL;
        return (int)((x * 0x0101010101010101ULL) >> 56);
    }
    #endif
    """
    int BIBIT_POPCNT(unsigned long long x) nogil


def xnor_gemm(const uint64_t[:, ::1] a, const uint64_t[:, ::1] b, int64_t k):
    """Signed dot products of every row of ``a`` with every row of ``b``."""
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t w = a.shape[1]
    cdef Py_ssize_t i, j, t
    cdef int64_t h
    out = np.empty((m, n), dtype=np.int32)
    cdef int32_t[:, ::1] o = out
    with nogil:
        for i in range(m):
            for j in range(n):
                h = 0
                for t in range(w):
                    h += BIBIT_POPCNT(a[i, t] ^ b[j, t])
                o[i, j] = <int32_t>(k - 2 * h)
    return out


def row_popcount(const uint64_t[:, ::1] a):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t w = a.shape[1]
    cdef Py_ssize_t i, t
    cdef int64_t h
    out = np.empty(m, dtype=np.int32)
    cdef int32_t[::1] o = out
    with nogil:
        for i in range(m):
            h = 0
            for t in range(w):
                h += BIBIT_POPCNT(a[i, t])
            o[i] = <int32_t>h
    return out


def bamm_gemm(const uint64_t[:, ::1] a, const uint64_t[:, ::1] v_t, int64_t k):
    """Fused affine product: ((a' xnor v) + colsum(v)) >> 1 for {0,1} rows ``a``."""
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = v_t.shape[0]
    cdef Py_ssize_t w = a.shape[1]
    cdef Py_ssize_t i, j, t
    cdef int64_t h, acc
    colsum = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] cs = colsum
    out = np.empty((m, n), dtype=np.int32)
    cdef int32_t[:, ::1] o = out
    with nogil:
        for j in range(n):
            h = 0
            for t in range(w):
                h += BIBIT_POPCNT(v_t[j, t])
            cs[j] = 2 * h - k
        for i in range(m):
            for j in range(n):
                h = 0
                for t in range(w):
                    h += BIBIT_POPCNT(a[i, t] ^ v_t[j, t])
                acc = (k - 2 * h) + cs[j]
                o[i, j] = <int32_t>(acc >> 1)
    return out
