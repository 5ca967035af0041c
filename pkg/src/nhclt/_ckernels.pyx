# cython: language_level=3
"""Compiled inner loops. Semantics mirror ``nhclt._pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


cdef double _delta_rows(const double[:, ::1] rows) noexcept nogil:
    cdef Py_ssize_t r = rows.shape[0], s = rows.shape[1]
    cdef Py_ssize_t a, b, y
    cdef double best = 0.0, l1, overlap, x, z, tv
    cdef const double *pa
    cdef const double *pb
    for a in range(r):
        pa = &rows[a, 0]
        for b in range(a + 1, r):
            pb = &rows[b, 0]
            l1 = 0.0
            overlap = 0.0
            for y in range(s):
                x = pa[y]
                z = pb[y]
                l1 += fabs(x - z)
                overlap += x if x < z else z
            if overlap == 0.0:
                tv = 1.0
            else:
                tv = 0.5 * l1
                if tv > 1.0:
                    tv = 1.0
            if tv > best:
                best = tv
                if best == 1.0:
                    return best
    return best


def delta_rows(const double[:, ::1] rows):
    """Largest pairwise total-variation distance between the given rows."""
    cdef double best
    with nogil:
        best = _delta_rows(rows)
    return best


cdef inline Py_ssize_t _search(const double[::1] cum, double u) noexcept nogil:
    # smallest j with cum[j] > u; cum[-1] == 1.0 > u by construction
    cdef Py_ssize_t lo = 0, hi = cum.shape[0] - 1, mid
    while lo < hi:
        mid = (lo + hi) // 2
        if cum[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


def sample_chain(const double[:, :, ::1] cum, const cnp.intp_t[::1] kernel_id,
                 const double[::1] cum0, const double[:, ::1] u):
    """Inverse-CDF path sampling; returns an (N, T) array of state indices."""
    cdef Py_ssize_t npaths = u.shape[0], T = u.shape[1]
    cdef Py_ssize_t p, t, state
    out_arr = np.empty((npaths, T), dtype=np.intp)
    cdef cnp.intp_t[:, ::1] out = out_arr
    with nogil:
        for p in range(npaths):
            state = _search(cum0, u[p, 0])
            out[p, 0] = state
            for t in range(1, T):
                state = _search(cum[kernel_id[t - 1], state], u[p, t])
                out[p, t] = state
    return out_arr
