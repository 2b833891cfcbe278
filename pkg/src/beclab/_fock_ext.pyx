# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Fock kernels; same contract as beclab._fock_py."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def binomial_table(int top):
    cdef cnp.int64_t[:, ::1] C = np.zeros((top + 1, top + 1), dtype=np.int64)
    cdef int a, b
    for a in range(top + 1):
        C[a, 0] = 1
        for b in range(1, a + 1):
            C[a, b] = C[a - 1, b - 1] + C[a - 1, b]
    return np.asarray(C)


def enumerate_states(int N, int d):
    C = binomial_table(N + d)
    cdef Py_ssize_t D = C[N + d - 1, N]
    out_arr = np.zeros((D, d), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef cnp.int64_t[::1] cur = np.zeros(d, dtype=np.int64)
    cdef Py_ssize_t s
    cdef int i, j
    cdef cnp.int64_t tail
    cur[0] = N
    for j in range(d):
        out[0, j] = cur[j]
    for s in range(1, D):
        i = d - 2
        while cur[i] == 0:
            i -= 1
        tail = 0
        for j in range(i + 1, d):
            tail += cur[j]
            cur[j] = 0
        cur[i] -= 1
        cur[i + 1] = tail + 1
        for j in range(d):
            out[s, j] = cur[j]
    return out_arr


cdef inline cnp.int64_t _rank(cnp.int64_t[::1] occ, int N, int d, cnp.int64_t[:, ::1] C) nogil:
    cdef cnp.int64_t r = 0, remaining = N, free
    cdef int i
    for i in range(d):
        free = remaining - occ[i]
        if free >= 1:
            r += C[free - 1 + d - 1 - i, d - 1 - i]
        remaining -= occ[i]
    return r


def rank_states(states, int N, binom):
    cdef cnp.int64_t[:, ::1] S = np.ascontiguousarray(np.atleast_2d(states), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] C = np.ascontiguousarray(binom, dtype=np.int64)
    cdef Py_ssize_t D = S.shape[0], s
    cdef int d = S.shape[1]
    out_arr = np.empty(D, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    for s in range(D):
        out[s] = _rank(S[s], N, d, C)
    return out_arr


def annihilation_triplets(states, int N, int order, binom):
    cdef cnp.int64_t[:, ::1] S = np.ascontiguousarray(states, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] C = np.ascontiguousarray(binom, dtype=np.int64)
    cdef Py_ssize_t D = S.shape[0], s, m = 0, cap
    cdef int d = S.shape[1], k, l, j
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    cap = D * (d if order == 1 else d * d)
    chan_a = np.empty(cap, dtype=np.int64)
    tgt_a = np.empty(cap, dtype=np.int64)
    src_a = np.empty(cap, dtype=np.int64)
    amp_a = np.empty(cap, dtype=np.float64)
    cdef cnp.int64_t[::1] chan = chan_a, tgt = tgt_a, src = src_a
    cdef double[::1] amp = amp_a
    cdef cnp.int64_t[::1] work = np.empty(d, dtype=np.int64)
    cdef double a1, a2
    # channel-major order to match the numpy reference
    if order == 1:
        for k in range(d):
            for s in range(D):
                if S[s, k] == 0:
                    continue
                for j in range(d):
                    work[j] = S[s, j]
                a1 = <double>work[k]
                work[k] -= 1
                chan[m] = k
                tgt[m] = _rank(work, N - 1, d, C)
                src[m] = s
                amp[m] = sqrt(a1)
                m += 1
    else:
        for k in range(d):
            for l in range(d):
                for s in range(D):
                    for j in range(d):
                        work[j] = S[s, j]
                    a1 = <double>work[k]
                    work[k] -= 1
                    a2 = <double>work[l]
                    work[l] -= 1
                    if a1 <= 0 or a2 <= 0:
                        continue
                    chan[m] = k * d + l
                    tgt[m] = _rank(work, N - 2, d, C)
                    src[m] = s
                    amp[m] = sqrt(a1 * a2)
                    m += 1
    return chan_a[:m], tgt_a[:m], src_a[:m], amp_a[:m]
