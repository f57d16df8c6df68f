# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled relation-indicator lookup."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint8_t

cnp.import_array()


cdef inline bint _contains(const int64_t[::1] indices, int64_t lo, int64_t hi, int64_t x) noexcept nogil:
    cdef int64_t mid, end = hi
    while lo < hi:
        mid = (lo + hi) >> 1
        if indices[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo < end and indices[lo] == x


def relation_indicators(const int64_t[:, ::1] hist, const int64_t[:, ::1] targets, list csr):
    """out[n, m, l, r] = 1 iff edge (hist[n, l] -> targets[n, m]) exists in relation r."""
    cdef Py_ssize_t N = hist.shape[0], L = hist.shape[1], M = targets.shape[1]
    cdef Py_ssize_t R = len(csr)
    cdef Py_ssize_t n, m, l, r
    cdef int64_t h, lo, hi, n_nodes
    out_arr = np.zeros((N, M, L, R), dtype=np.uint8)
    cdef uint8_t[:, :, :, ::1] out = out_arr
    cdef const int64_t[::1] indptr
    cdef const int64_t[::1] indices
    for r in range(R):
        indptr = csr[r][0]
        indices = csr[r][1]
        n_nodes = indptr.shape[0] - 1
        if indices.shape[0] == 0:
            continue
        with nogil:
            for n in range(N):
                for l in range(L):
                    h = hist[n, l]
                    if h <= 0 or h >= n_nodes:
                        continue
                    lo = indptr[h]
                    hi = indptr[h + 1]
                    if lo == hi:
                        continue
                    for m in range(M):
                        if _contains(indices, lo, hi, targets[n, m]):
                            out[n, m, l, r] = 1
    return out_arr
