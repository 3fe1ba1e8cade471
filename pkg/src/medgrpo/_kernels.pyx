# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``; same signatures."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, fmax, fmin

cnp.import_array()

cdef double STD_EPS = 1e-8
cdef double LOG_FLOOR = -700.0


cdef inline double _safe_log(double x) noexcept nogil:
    if x <= 0.0:
        return LOG_FLOOR
    return fmax(log(x), LOG_FLOOR)


def temporal_iou_pairs(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef double inter, union
    out = np.zeros(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            inter = fmax(0.0, fmin(a[i, 1], b[i, 1]) - fmax(a[i, 0], b[i, 0]))
            union = (a[i, 1] - a[i, 0]) + (b[i, 1] - b[i, 0]) - inter
            if union > 0:
                o[i] = inter / union
            elif a[i, 0] == b[i, 0] and a[i, 1] == b[i, 1]:
                o[i] = 1.0
    return out


def box_iou_pairs(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef double iw, ih, inter, union
    out = np.zeros(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            iw = fmax(0.0, fmin(a[i, 2], b[i, 2]) - fmax(a[i, 0], b[i, 0]))
            ih = fmax(0.0, fmin(a[i, 3], b[i, 3]) - fmax(a[i, 1], b[i, 1]))
            inter = iw * ih
            union = ((a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
                     + (b[i, 2] - b[i, 0]) * (b[i, 3] - b[i, 1]) - inter)
            if union > 0:
                o[i] = inter / union
            elif (a[i, 0] == b[i, 0] and a[i, 1] == b[i, 1]
                  and a[i, 2] == b[i, 2] and a[i, 3] == b[i, 3]):
                o[i] = 1.0
    return out


def group_advantages_rows(const double[:, ::1] rewards):
    cdef Py_ssize_t n = rewards.shape[0], g = rewards.shape[1], i, j
    cdef double mean, var, std, c
    out = np.zeros((n, g))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            mean = 0.0
            for j in range(g):
                mean += rewards[i, j]
            mean /= g
            var = 0.0
            for j in range(g):
                c = rewards[i, j] - mean
                var += c * c
            std = sqrt(var / g)
            if std >= STD_EPS:
                for j in range(g):
                    o[i, j] = (rewards[i, j] - mean) / std
    return out


def clipped_surrogate_terms(ratios, adv, double eps_low, double eps_high):
    r = np.ascontiguousarray(ratios, dtype=np.float64)
    a = np.ascontiguousarray(np.broadcast_to(adv, r.shape), dtype=np.float64)
    shape = r.shape
    cdef const double[::1] rv = r.reshape(-1)
    cdef const double[::1] av = a.reshape(-1)
    cdef Py_ssize_t n = rv.shape[0], i
    terms = np.empty(n)
    weights = np.empty(n)
    mask = np.zeros(n, dtype=np.uint8)
    cdef double[::1] tv = terms
    cdef double[::1] wv = weights
    cdef unsigned char[::1] mv = mask
    cdef double lo = 1.0 - eps_low, hi = 1.0 + eps_high, un, cl
    with nogil:
        for i in range(n):
            un = rv[i] * av[i]
            cl = fmin(fmax(rv[i], lo), hi) * av[i]
            if cl < un:
                tv[i] = cl
                wv[i] = 0.0
                mv[i] = 1
            else:
                tv[i] = un
                wv[i] = av[i]
    return terms.reshape(shape), weights.reshape(shape), mask.view(np.bool_).reshape(shape)


cdef void _fill_levels(const double[:, ::1] q, double[:, :, ::1] lv, int depth) noexcept nogil:
    # lv[b, t, j] holds the prefix mass of code-prefix j at level t
    cdef Py_ssize_t n = q.shape[0], k = q.shape[1], b, j
    cdef int t, width = 1 << depth
    for b in range(n):
        for j in range(width):
            lv[b, depth, j] = q[b, j] if j < k else 0.0
        for t in range(depth - 1, -1, -1):
            for j in range(1 << t):
                lv[b, t, j] = lv[b, t + 1, 2 * j] + lv[b, t + 1, 2 * j + 1]


def token_logprobs(const double[:, ::1] q, const long[:, ::1] actions, int depth):
    cdef Py_ssize_t n = q.shape[0], g = actions.shape[1], b, i
    cdef int t
    cdef long a
    lv_arr = np.zeros((n, depth + 1, 1 << depth))
    cdef double[:, :, ::1] lv = lv_arr
    out = np.empty((n, g, depth))
    cdef double[:, :, ::1] o = out
    with nogil:
        _fill_levels(q, lv, depth)
        for b in range(n):
            for i in range(g):
                a = actions[b, i]
                for t in range(depth):
                    o[b, i, t] = (_safe_log(lv[b, t + 1, a >> (depth - t - 1)])
                                  - _safe_log(lv[b, t, a >> (depth - t)]))
    return out


def logit_grad(const double[:, ::1] q, const long[:, ::1] actions, const double[:, :, ::1] coef,
               int depth, double tau):
    cdef Py_ssize_t n = q.shape[0], k = q.shape[1], g = actions.shape[1], b, i, j
    cdef int t, hi, lo
    cdef long a
    cdef double s_num, s_den, c_num, c_den
    lv_arr = np.zeros((n, depth + 1, 1 << depth))
    cdef double[:, :, ::1] lv = lv_arr
    out = np.zeros((n, k))
    cdef double[:, ::1] o = out
    with nogil:
        _fill_levels(q, lv, depth)
        for b in range(n):
            for i in range(g):
                a = actions[b, i]
                for t in range(depth):
                    hi = depth - t - 1
                    lo = depth - t
                    s_num = lv[b, t + 1, a >> hi]
                    s_den = lv[b, t, a >> lo]
                    c_num = coef[b, i, t] / s_num if s_num > 0 else 0.0
                    c_den = coef[b, i, t] / s_den if s_den > 0 else 0.0
                    for j in range(k):
                        if (j >> hi) == (a >> hi):
                            o[b, j] += c_num * q[b, j]
                        if (j >> lo) == (a >> lo):
                            o[b, j] -= c_den * q[b, j]
            for j in range(k):
                o[b, j] /= tau
    return out
