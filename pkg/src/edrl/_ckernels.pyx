# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scans: logcumsumexp backward and edit-distance DPs."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def logcumsumexp_backward(const double[:, ::1] x, const double[:, ::1] out,
                          const double[:, ::1] g):
    # q_k = g_k + exp(out_k - out_{k+1}) q_{k+1};  dx_k = exp(x_k - out_k) q_k
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], r, k
    cdef double q
    res = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] dx = res
    for r in range(rows):
        q = 0.0
        for k in range(n - 1, -1, -1):
            if k == n - 1:
                q = g[r, k]
            else:
                q = g[r, k] + exp(out[r, k] - out[r, k + 1]) * q
            dx[r, k] = exp(x[r, k] - out[r, k]) * q
    return res


def prefix_error_increments(const long long[::1] hyp, const long long[::1] ref):
    cdef Py_ssize_t n = hyp.shape[0], m = ref.shape[0], i, j
    cdef long long best, best_prev = 0, cost, v
    row_a = np.arange(m + 1, dtype=np.int64)
    row_b = np.empty(m + 1, dtype=np.int64)
    res = np.zeros(n, dtype=np.int64)
    cdef long long[::1] prev = row_a, cur = row_b, tmp, inc = res
    for j in range(1, n + 1):
        cur[0] = j
        best = j
        for i in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            v = prev[i] + 1
            if cur[i - 1] + 1 < v:
                v = cur[i - 1] + 1
            if prev[i - 1] + cost < v:
                v = prev[i - 1] + cost
            cur[i] = v
            if v < best:
                best = v
        inc[j - 1] = best - best_prev
        best_prev = best
        tmp = prev
        prev = cur
        cur = tmp
    return res


def levenshtein(const long long[::1] a, const long long[::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    cdef long long v, cost
    row_a = np.arange(m + 1, dtype=np.int64)
    row_b = np.empty(m + 1, dtype=np.int64)
    cdef long long[::1] prev = row_a, cur = row_b, tmp
    for j in range(1, n + 1):
        cur[0] = j
        for i in range(1, m + 1):
            cost = 0 if b[i - 1] == a[j - 1] else 1
            v = prev[i] + 1
            if cur[i - 1] + 1 < v:
                v = cur[i - 1] + 1
            if prev[i - 1] + cost < v:
                v = prev[i - 1] + cost
            cur[i] = v
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])
