# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled enumeration kernel."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def expected_quadratic_gain(q, weights, values, probs, offsets, double target):
    cdef double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[::1] wv = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[::1] vv = np.ascontiguousarray(values, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(probs, dtype=np.float64)
    cdef long long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef Py_ssize_t n = qv.shape[0]
    if n > 30:
        raise ValueError("too many participants for bitmask enumeration")
    cdef long long[::1] members = np.zeros(n, dtype=np.int64)
    cdef long long[::1] idx = np.zeros(n, dtype=np.int64)
    cdef long long mask, full = (<long long>1) << n
    cdef Py_ssize_t i, k, r, pos
    cdef double p_sel, p, acc, wsum, d, num = 0.0, p_empty = 1.0
    for i in range(n):
        p_empty *= 1.0 - qv[i]
    for mask in range(1, full):
        p_sel = 1.0
        r = 0
        wsum = 0.0
        for i in range(n):
            if (mask >> i) & 1:
                p_sel *= qv[i]
                members[r] = i
                wsum += wv[i]
                r += 1
            else:
                p_sel *= 1.0 - qv[i]
        if p_sel == 0.0:
            continue
        for k in range(r):
            idx[k] = off[members[k]]
        while True:
            p = p_sel
            acc = 0.0
            for k in range(r):
                i = members[k]
                p *= pv[idx[k]]
                acc += wv[i] * vv[idx[k]]
            d = acc / wsum - target
            num += p * (-d * d)
            # advance the mixed-radix counter over outcome indices
            pos = 0
            while pos < r:
                idx[pos] += 1
                if idx[pos] < off[members[pos] + 1]:
                    break
                idx[pos] = off[members[pos]]
                pos += 1
            if pos == r:
                break
    return num, 1.0 - p_empty
