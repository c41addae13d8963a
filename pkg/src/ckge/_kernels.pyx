# cython: language_level=3
"""Compiled inner loops for candidate scoring, rank counting and row scatter."""
import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


def neg_distances(const double[:, ::1] q, const double[:, ::1] cand, int p):
    cdef Py_ssize_t nq = q.shape[0], nc = cand.shape[0], d = q.shape[1]
    cdef Py_ssize_t a, c, k
    cdef double acc, diff
    out = np.empty((nq, nc), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for a in range(nq):
            for c in range(nc):
                acc = 0.0
                if p == 1:
                    for k in range(d):
                        acc = acc + fabs(q[a, k] - cand[c, k])
                    o[a, c] = -acc
                else:
                    for k in range(d):
                        diff = q[a, k] - cand[c, k]
                        acc = acc + diff * diff
                    o[a, c] = -sqrt(acc)
    return out


def count_better(const double[:, ::1] scores, const long long[::1] true_idx,
                 const long long[::1] split, const long long[::1] n_cand,
                 const long long[::1] excl_ptr, const long long[::1] excl_idx):
    """Per query: strictly-better competitors before/after ``split``, ties, best competitor.

    ``excl_idx[excl_ptr[q]:excl_ptr[q+1]]`` lists filtered candidates for query q;
    they must be unique and must not contain the true index.
    """
    cdef Py_ssize_t nq = scores.shape[0], width = scores.shape[1]
    cdef Py_ssize_t a, c, e, n
    cdef double s, ts, best
    cdef long long bi, lo, hi
    local = np.zeros(nq, dtype=np.int64)
    new = np.zeros(nq, dtype=np.int64)
    ties = np.zeros(nq, dtype=np.int64)
    bestc = np.full(nq, -1, dtype=np.int64)
    cdef long long[::1] lv = local, nv = new, tv = ties, bv = bestc
    mark_arr = np.zeros(width, dtype=np.uint8)
    cdef unsigned char[::1] mark = mark_arr
    with nogil:
        for a in range(nq):
            n = n_cand[a]
            ts = scores[a, true_idx[a]]
            lo = excl_ptr[a]
            hi = excl_ptr[a + 1]
            for e in range(lo, hi):
                if excl_idx[e] < n:
                    mark[excl_idx[e]] = 1
            mark[true_idx[a]] = 1
            bi = -1
            best = 0.0
            for c in range(n):
                if mark[c]:
                    continue
                s = scores[a, c]
                if s > ts:
                    if c < split[a]:
                        lv[a] += 1
                    else:
                        nv[a] += 1
                elif s == ts:
                    tv[a] += 1
                if bi < 0 or s > best:
                    bi = c
                    best = s
            bv[a] = bi
            for e in range(lo, hi):
                if excl_idx[e] < n:
                    mark[excl_idx[e]] = 0
            mark[true_idx[a]] = 0
    return local, new, ties, bestc


def scatter_add_rows(const long long[::1] rows, const double[:, ::1] values, Py_ssize_t n_rows):
    """Dense accumulation of ``values`` into ``n_rows`` rows; returns (unique rows, sums)."""
    cdef Py_ssize_t m = rows.shape[0], d = values.shape[1]
    cdef Py_ssize_t i, k, u = 0
    cdef long long r
    slot_arr = np.full(n_rows, -1, dtype=np.int64)
    cdef long long[::1] slot = slot_arr
    order_arr = np.empty(m, dtype=np.int64)
    cdef long long[::1] order = order_arr
    acc_arr = np.zeros((m, d), dtype=np.float64)
    cdef double[:, ::1] acc = acc_arr
    with nogil:
        for i in range(m):
            r = rows[i]
            if slot[r] < 0:
                slot[r] = u
                order[u] = r
                u += 1
            for k in range(d):
                acc[slot[r], k] += values[i, k]
    uniq = order_arr[:u]
    sums = acc_arr[:u]
    perm = np.argsort(uniq, kind="stable")
    return np.ascontiguousarray(uniq[perm]), np.ascontiguousarray(sums[perm])
