# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled sparse/graph kernels. Same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY
from libcpp.vector cimport vector

cnp.import_array()

NAME = "cython"


def spmm(const long long[::1] indptr, const long long[::1] indices,
         const double[::1] data, const double[:, ::1] x):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t width = x.shape[1]
    out_arr = np.zeros((n_rows, width))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, d, c
    cdef double w
    with nogil:
        for i in range(n_rows):
            for e in range(indptr[i], indptr[i + 1]):
                c = indices[e]
                w = data[e]
                for d in range(width):
                    out[i, d] += w * x[c, d]
    return out_arr


def spmm_t(const long long[::1] indptr, const long long[::1] indices,
           const double[::1] data, const double[:, ::1] g, Py_ssize_t n_cols):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t width = g.shape[1]
    out_arr = np.zeros((n_cols, width))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, d, c
    cdef double w
    with nogil:
        for i in range(n_rows):
            for e in range(indptr[i], indptr[i + 1]):
                c = indices[e]
                w = data[e]
                for d in range(width):
                    out[c, d] += w * g[i, d]
    return out_arr


def sddmm(const long long[::1] indptr, const long long[::1] indices,
          const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t dim = a.shape[1]
    vals_arr = np.zeros(indices.shape[0])
    cdef double[::1] vals = vals_arr
    cdef Py_ssize_t i, e, d, c
    cdef double s
    with nogil:
        for i in range(n_rows):
            for e in range(indptr[i], indptr[i + 1]):
                c = indices[e]
                s = 0.0
                for d in range(dim):
                    s = s + a[i, d] * b[c, d]
                vals[e] = s
    return vals_arr


def threshold_support(const double[:, ::1] h):
    cdef Py_ssize_t n = h.shape[0]
    cdef Py_ssize_t dim = h.shape[1]
    cdef Py_ssize_t i, j, d
    cdef double s, mean, lo, hi
    cdef vector[double] row = vector[double](n)
    cdef vector[long long] cols
    cdef vector[double] vals
    indptr_arr = np.zeros(n + 1, dtype=np.int64)
    cdef long long[::1] indptr = indptr_arr
    with nogil:
        for i in range(n):
            mean = 0.0
            for j in range(n):
                s = 0.0
                for d in range(dim):
                    s = s + h[i, d] * h[j, d]
                row[j] = s
                mean = mean + s
                if j == 0 or s < lo:
                    lo = s
                if j == 0 or s > hi:
                    hi = s
            # a rounded mean can fall outside [min, max]; clamp so constant rows stay empty
            mean = min(max(mean / n, lo), hi)
            for j in range(n):
                if row[j] > mean:
                    cols.push_back(j)
                    vals.push_back(row[j])
            indptr[i + 1] = cols.size()
    indices_arr = np.empty(cols.size(), dtype=np.int64)
    data_arr = np.empty(vals.size())
    cdef long long[::1] indices_v = indices_arr
    cdef double[::1] data_v = data_arr
    cdef Py_ssize_t k
    for k in range(<Py_ssize_t>cols.size()):
        indices_v[k] = cols[k]
        data_v[k] = vals[k]
    return indptr_arr, indices_arr, data_arr


def degree_profile(const long long[::1] indptr, const long long[::1] indices):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out_arr = np.zeros((n, 5))
    cdef double[:, ::1] out = out_arr
    deg_arr = np.zeros(n)
    cdef double[::1] deg = deg_arr
    cdef Py_ssize_t i, e, c
    cdef double lo, hi, total, mean, sq, nd
    with nogil:
        for i in range(n):
            for e in range(indptr[i], indptr[i + 1]):
                if indices[e] != i:
                    deg[i] += 1.0
        for i in range(n):
            out[i, 0] = deg[i]
            if deg[i] == 0.0:
                continue
            lo = INFINITY
            hi = -INFINITY
            total = 0.0
            for e in range(indptr[i], indptr[i + 1]):
                c = indices[e]
                if c == i:
                    continue
                nd = deg[c]
                if nd < lo:
                    lo = nd
                if nd > hi:
                    hi = nd
                total = total + nd
            mean = total / deg[i]
            sq = 0.0
            for e in range(indptr[i], indptr[i + 1]):
                c = indices[e]
                if c == i:
                    continue
                sq = sq + (deg[c] - mean) * (deg[c] - mean)
            out[i, 1] = lo
            out[i, 2] = hi
            out[i, 3] = mean
            out[i, 4] = sqrt(sq / deg[i])
    return out_arr
