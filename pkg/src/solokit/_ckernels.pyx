# cython: language_level=3
"""Compiled kernels: bit-packed IoU matrix and the four NMS loops.

Same contracts as ``_pykernels``. Reductions run in a fixed order per output
element, so results do not depend on ``num_threads``.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

LINEAR = 0
GAUSSIAN = 1

NAME = "compiled"


cdef extern from *:
    """
    static inline int solokit_popcount(unsigned long long x) {
        return __builtin_popcountll(x);
    }
    """
    int solokit_popcount(unsigned long long x) nogil


cdef inline int _nt(int num_threads) noexcept nogil:
    return num_threads if num_threads > 0 else 1


def iou_matrix(flat, int num_threads=0):
    cdef Py_ssize_t n = flat.shape[0]
    packed = np.packbits(np.asarray(flat, dtype=np.uint8), axis=1)
    pad = (-packed.shape[1]) % 8
    if pad:
        packed = np.pad(packed, ((0, 0), (0, pad)))
    cdef uint64_t[:, ::1] words = np.ascontiguousarray(packed).view(np.uint64)
    cdef Py_ssize_t nw = words.shape[1]
    out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef int64_t[::1] area = np.zeros(n, dtype=np.int64)
    cdef Py_ssize_t i, j, w
    cdef int64_t inter, union, acc

    for i in prange(n, nogil=True, num_threads=_nt(num_threads), schedule="static"):
        acc = 0
        for w in range(nw):
            acc = acc + solokit_popcount(words[i, w])
        area[i] = acc

    for i in prange(n, nogil=True, num_threads=_nt(num_threads), schedule="dynamic"):
        for j in range(i, n):
            inter = 0
            for w in range(nw):
                inter = inter + solokit_popcount(words[i, w] & words[j, w])
            union = area[i] + area[j] - inter
            if union > 0:
                o[i, j] = <double>inter / <double>union
                o[j, i] = o[i, j]
    return out


def hard_nms(const double[:, ::1] ious, const int64_t[::1] labels, double iou_threshold):
    cdef Py_ssize_t n = labels.shape[0]
    keep = np.zeros(n, dtype=bool)
    cdef cnp.npy_bool[::1] k = keep
    cdef int64_t[::1] kept = np.empty(max(n, 1), dtype=np.int64)
    cdef Py_ssize_t nk = 0, j, t
    cdef bint ok
    with nogil:
        for j in range(n):
            ok = True
            for t in range(nk):
                if labels[kept[t]] == labels[j] and ious[j, kept[t]] > iou_threshold:
                    ok = False
                    break
            if ok:
                k[j] = True
                kept[nk] = j
                nk = nk + 1
    return keep


def fast_nms(const double[:, ::1] ious, const int64_t[::1] labels, double iou_threshold,
             int num_threads=0):
    cdef Py_ssize_t n = labels.shape[0]
    keep = np.zeros(n, dtype=bool)
    cdef cnp.npy_bool[::1] k = keep
    cdef Py_ssize_t i, j
    cdef double m
    for j in prange(n, nogil=True, num_threads=_nt(num_threads), schedule="static"):
        m = 0.0
        for i in range(j):
            if labels[i] == labels[j] and ious[j, i] > m:
                m = ious[j, i]
        k[j] = m <= iou_threshold
    return keep


def soft_nms(const double[:, ::1] ious, const int64_t[::1] labels, scores,
             int kind, double sigma, double score_floor):
    cdef Py_ssize_t n = labels.shape[0]
    s_arr = np.array(scores, dtype=np.float64, copy=True)
    cdef double[::1] s = s_arr
    cdef cnp.npy_bool[::1] alive = np.ones(n, dtype=bool)
    order_arr = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] order = order_arr
    cdef Py_ssize_t n_out = 0, step, i, j, best
    cdef double v, best_score
    with nogil:
        for step in range(n):
            best = -1
            best_score = 0.0
            for i in range(n):
                if alive[i] and (best < 0 or s[i] > best_score):
                    best = i
                    best_score = s[i]
            if best < 0:
                break
            alive[best] = False
            order[n_out] = best
            n_out = n_out + 1
            for j in range(n):
                if alive[j] and labels[j] == labels[best]:
                    v = ious[best, j]
                    if kind == 1:
                        s[j] = s[j] * exp(-(v * v) / sigma)
                    else:
                        s[j] = s[j] * (1.0 - v)
                    if s[j] < score_floor:
                        alive[j] = False
    return order_arr[:n_out].copy(), s_arr


def matrix_nms(const double[:, ::1] ious, const int64_t[::1] labels, int kind, double sigma,
               int num_threads=0):
    cdef Py_ssize_t n = labels.shape[0]
    cmax_arr = np.zeros(n, dtype=np.float64)
    decay_arr = np.ones(n, dtype=np.float64)
    cdef double[::1] cmax = cmax_arr
    cdef double[::1] decay = decay_arr
    cdef Py_ssize_t i, j
    cdef double m, t, d, v

    if _nt(num_threads) == 1:
        with nogil:
            _matrix_fused(ious, labels, kind, sigma, cmax, decay)
        return cmax_arr, decay_arr

    # ious is symmetric: row j left of the diagonal is column j above it
    for j in prange(n, nogil=True, num_threads=_nt(num_threads), schedule="static"):
        m = 0.0
        for i in range(j):
            if labels[i] == labels[j] and ious[j, i] > m:
                m = ious[j, i]
        cmax[j] = m

    if kind == 1:
        # exp is decreasing, so the column-min of the decay matrix is
        # exp of the column-max exponent
        for j in prange(n, nogil=True, num_threads=_nt(num_threads), schedule="static"):
            m = 0.0
            for i in range(j):
                if labels[i] == labels[j]:
                    t = ious[j, i] * ious[j, i] - cmax[i] * cmax[i]
                    if t > m:
                        m = t
            decay[j] = exp(-m / sigma)
    else:
        for j in prange(n, nogil=True, num_threads=_nt(num_threads), schedule="static"):
            v = 1.0
            for i in range(j):
                if labels[i] == labels[j]:
                    d = 1.0 - cmax[i]
                    if d > 0.0:
                        t = (1.0 - ious[j, i]) / d
                        if t < v:
                            v = t
            decay[j] = v
    return cmax_arr, decay_arr


cdef void _matrix_fused(const double[:, ::1] ious, const int64_t[::1] labels, int kind, double sigma,
                        double[::1] cmax, double[::1] decay) noexcept nogil:
    # one sweep over row j: cmax[i] for every i < j is final by then
    cdef Py_ssize_t n = labels.shape[0], i, j
    cdef double m, e, v, t, d, x
    for j in range(n):
        m = 0.0
        e = 0.0
        v = 1.0
        for i in range(j):
            if labels[i] != labels[j]:
                continue
            x = ious[j, i]
            if x > m:
                m = x
            if kind == 1:
                t = x * x - cmax[i] * cmax[i]
                if t > e:
                    e = t
            else:
                d = 1.0 - cmax[i]
                if d > 0.0:
                    t = (1.0 - x) / d
                    if t < v:
                        v = t
        cmax[j] = m
        decay[j] = exp(-e / sigma) if kind == 1 else v
