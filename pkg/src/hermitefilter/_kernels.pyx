# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels. Must agree with ``_fallback`` to roundoff."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs

cnp.import_array()

cdef double _BIG = 1e100
cdef double _LOG_BIG = log(1e100)


def hermite_table(t, Py_ssize_t n_modes, log_offset=None):
    cdef cnp.ndarray[double, ndim=1] tv = np.ascontiguousarray(np.atleast_1d(t), dtype=np.float64)
    cdef Py_ssize_t m = tv.shape[0]
    cdef cnp.ndarray[double, ndim=1] off
    if log_offset is None:
        off = np.zeros(m)
    else:
        off = np.ascontiguousarray(np.broadcast_to(log_offset, (m,)), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] out = np.empty((m, n_modes + 1))
    cdef double[:, ::1] ov = out
    cdef double[::1] a = np.sqrt(2.0 / np.arange(1, n_modes + 1, dtype=np.float64)) if n_modes > 0 else np.zeros(1)
    cdef double[::1] b = np.sqrt(np.arange(n_modes, dtype=np.float64) / np.arange(1, n_modes + 1, dtype=np.float64)) if n_modes > 0 else np.zeros(1)
    cdef Py_ssize_t j, n
    cdef double x, scale, prev, cur, nxt
    with nogil:
        for j in range(m):
            x = tv[j]
            scale = -0.5 * x * x + off[j]
            prev = 0.0
            cur = 1.0
            ov[j, 0] = exp(scale)
            for n in range(n_modes):
                nxt = a[n] * x * cur - b[n] * prev
                prev = cur
                cur = nxt
                if fabs(cur) > _BIG:
                    cur = cur / _BIG
                    prev = prev / _BIG
                    scale = scale + _LOG_BIG
                if cur == 0.0:
                    ov[j, n + 1] = 0.0
                elif cur > 0.0:
                    ov[j, n + 1] = exp(scale + log(cur))
                else:
                    ov[j, n + 1] = -exp(scale + log(-cur))
    return out


def systematic_resample(weights, double offset):
    cdef cnp.ndarray[double, ndim=1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = w.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t i = 0, j = 0
    cdef double cum = w[0], pos
    with nogil:
        for i in range(n):
            pos = (offset + i) / n
            while j < n - 1 and cum <= pos:
                j += 1
                cum += w[j]
            idx[i] = j
    return idx
