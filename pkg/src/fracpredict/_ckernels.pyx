# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. See ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def ar_scan(const double[::1] phi, const double[::1] c, const double[::1] g,
            dB, x0):
    cdef const double[:, ::1] inc = np.ascontiguousarray(dB, dtype=np.float64)
    cdef Py_ssize_t n = inc.shape[0], m = inc.shape[1], i, k
    out_arr = np.empty((n, m + 1), dtype=np.float64)
    start = np.broadcast_to(np.asarray(x0, dtype=np.float64), (n,)).copy()
    cdef double[:, ::1] out = out_arr
    cdef const double[::1] s = start
    cdef double x
    with nogil:
        for i in range(n):
            x = s[i]
            out[i, 0] = x
            for k in range(m):
                x = phi[k] * x + c[k] + g[k] * inc[i, k]
                out[i, k + 1] = x
    return out_arr


def pole_sums(const double[::1] v, const double[::1] z, const double[::1] w):
    cdef Py_ssize_t nv = v.shape[0], nz = z.shape[0], i, k
    out_arr = np.empty(nv, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double acc, vi
    with nogil:
        for i in range(nv):
            vi = v[i]
            acc = 0.0
            for k in range(nz):
                acc = acc + w[k] / (z[k] - vi)
            out[i] = acc
    return out_arr
