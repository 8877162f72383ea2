# cython: language_level=3
"""Compiled block kernels; same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdlib cimport qsort

cnp.import_array()


cdef int _cmp_desc(const void* a, const void* b) noexcept nogil:
    cdef double x = (<double*>a)[0]
    cdef double y = (<double*>b)[0]
    if x < y:
        return 1
    if x > y:
        return -1
    return 0


cdef void _norms(const double[::1] x, const cnp.int64_t[::1] perm,
                 const cnp.int64_t[::1] ptr, double[::1] out) noexcept nogil:
    cdef Py_ssize_t g, i
    cdef double acc, xi
    for g in range(ptr.shape[0] - 1):
        acc = 0.0
        for i in range(ptr[g], ptr[g + 1]):
            xi = x[perm[i]]
            acc += xi * xi
        out[g] = sqrt(acc)


def block_norms(x, perm, ptr):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.int64_t[::1] pv = np.ascontiguousarray(perm, dtype=np.int64)
    cdef cnp.int64_t[::1] rv = np.ascontiguousarray(ptr, dtype=np.int64)
    out = np.zeros(max(rv.shape[0] - 1, 0))
    cdef double[::1] ov = out
    with nogil:
        _norms(xv, pv, rv, ov)
    return out


def block_soft_threshold(x, double lam, perm, ptr):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.int64_t[::1] pv = np.ascontiguousarray(perm, dtype=np.int64)
    cdef cnp.int64_t[::1] rv = np.ascontiguousarray(ptr, dtype=np.int64)
    cdef Py_ssize_t q = max(rv.shape[0] - 1, 0)
    norms = np.zeros(q)
    out = np.zeros(xv.shape[0])
    cdef double[::1] nv = norms
    cdef double[::1] ov = out
    cdef Py_ssize_t g, i
    cdef double scale
    with nogil:
        _norms(xv, pv, rv, nv)
        for g in range(q):
            if nv[g] <= lam:
                continue
            scale = 1.0 - lam / nv[g]
            for i in range(rv[g], rv[g + 1]):
                ov[pv[i]] = xv[pv[i]] * scale
    return out


def project_epigraph_maxnorm(v, double s, perm, ptr):
    cdef double[::1] xv = np.ascontiguousarray(v, dtype=np.float64)
    cdef cnp.int64_t[::1] pv = np.ascontiguousarray(perm, dtype=np.int64)
    cdef cnp.int64_t[::1] rv = np.ascontiguousarray(ptr, dtype=np.int64)
    cdef Py_ssize_t q = max(rv.shape[0] - 1, 0)
    if q == 0:
        return np.array(xv, copy=True), max(s, 0.0)
    norms = np.zeros(q)
    desc = np.zeros(q)
    out = np.zeros(xv.shape[0])
    cdef double[::1] nv = norms
    cdef double[::1] dv = desc
    cdef double[::1] ov = out
    cdef Py_ssize_t g, i, j
    cdef double nmax = 0.0, acc = 0.0, t = 0.0, nxt, scale
    with nogil:
        _norms(xv, pv, rv, nv)
        for g in range(q):
            if nv[g] > nmax:
                nmax = nv[g]
            dv[g] = nv[g]
    if nmax <= s:
        return np.array(xv, copy=True), s
    with nogil:
        qsort(&dv[0], q, sizeof(double), _cmp_desc)
        for j in range(q):
            acc += dv[j]
            t = (s + acc) / (j + 2)
            nxt = dv[j + 1] if j + 1 < q else -1.0
            if t >= nxt:
                break
        if t > 0.0:
            for g in range(q):
                scale = 1.0
                if nv[g] > t:
                    scale = t / nv[g]
                for i in range(rv[g], rv[g + 1]):
                    ov[pv[i]] = xv[pv[i]] * scale
    if t <= 0.0:
        return out, 0.0
    return out, t
