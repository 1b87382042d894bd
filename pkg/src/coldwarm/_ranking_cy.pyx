# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled ranking kernels: single pass ranks and heap-based top-k selection.

Must stay bit-for-bit identical to coldwarm._ranking_py: descending score,
ascending item id on ties, -inf entries excluded.
"""

from libc.math cimport INFINITY
from libc.stdlib cimport free, malloc

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef double NEG_INF = -INFINITY


def rank_rows(const double[:, ::1] scores, const long long[::1] targets):
    cdef Py_ssize_t m = scores.shape[0]
    cdef Py_ssize_t n = scores.shape[1]
    out = np.empty(m, dtype=np.int64)
    cdef long long[::1] ov = out
    cdef Py_ssize_t r, j, t
    cdef double st
    cdef long long cnt
    with nogil:
        for r in range(m):
            t = <Py_ssize_t> targets[r]
            st = scores[r, t]
            if st == NEG_INF:
                ov[r] = n + 1
                continue
            cnt = 0
            for j in range(n):
                if scores[r, j] > st:
                    cnt += 1
                elif scores[r, j] == st and j < t:
                    cnt += 1
            ov[r] = cnt + 1
    return out


cdef inline bint _worse(double s1, long long i1, double s2, long long i2) nogil:
    # ordering for the min-heap root: True when (s1, i1) ranks below (s2, i2)
    if s1 != s2:
        return s1 < s2
    return i1 > i2


cdef inline void _sift_down(double* hs, long long* hi, Py_ssize_t size, Py_ssize_t pos) nogil:
    cdef Py_ssize_t child
    cdef double tmps
    cdef long long tmpi
    while True:
        child = 2 * pos + 1
        if child >= size:
            return
        if child + 1 < size and _worse(hs[child + 1], hi[child + 1], hs[child], hi[child]):
            child += 1
        if _worse(hs[child], hi[child], hs[pos], hi[pos]):
            tmps = hs[pos]; hs[pos] = hs[child]; hs[child] = tmps
            tmpi = hi[pos]; hi[pos] = hi[child]; hi[child] = tmpi
            pos = child
        else:
            return


def topk_rows(const double[:, ::1] scores, Py_ssize_t k):
    cdef Py_ssize_t m = scores.shape[0]
    cdef Py_ssize_t n = scores.shape[1]
    if k > n:
        k = n
    idx = np.full((m, k), -1, dtype=np.int64)
    lengths = np.zeros(m, dtype=np.int64)
    cdef long long[:, ::1] iv = idx
    cdef long long[::1] lv = lengths
    cdef double* hs = <double*> malloc(k * sizeof(double))
    cdef long long* hi = <long long*> malloc(k * sizeof(long long))
    if hs == NULL or hi == NULL:
        free(hs); free(hi)
        raise MemoryError()
    cdef Py_ssize_t r, j, size, p
    cdef double s
    cdef long long tmpi
    try:
        with nogil:
            for r in range(m):
                size = 0
                for j in range(n):
                    s = scores[r, j]
                    if s == NEG_INF:
                        continue
                    if size < k:
                        # grow, then restore the heap bottom-up on fill
                        hs[size] = s
                        hi[size] = j
                        size += 1
                        if size == k:
                            for p in range(k // 2 - 1, -1, -1):
                                _sift_down(hs, hi, size, p)
                    elif _worse(hs[0], hi[0], s, j):
                        hs[0] = s
                        hi[0] = j
                        _sift_down(hs, hi, size, 0)
                if size < k:
                    for p in range(size // 2 - 1, -1, -1):
                        _sift_down(hs, hi, size, p)
                lv[r] = size
                # heap-sort: repeatedly move the worst element to the tail
                p = size
                while p > 1:
                    p -= 1
                    s = hs[0]; hs[0] = hs[p]; hs[p] = s
                    tmpi = hi[0]; hi[0] = hi[p]; hi[p] = tmpi
                    _sift_down(hs, hi, p, 0)
                for p in range(size):
                    iv[r, p] = hi[p]
    finally:
        free(hs)
        free(hi)
    return idx, lengths
