# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled HMM recursions; same contracts as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def forward_backward(log_start, log_trans, log_emis):
    cdef double[:, ::1] le = np.ascontiguousarray(log_emis, dtype=np.float64)
    cdef Py_ssize_t n = le.shape[0], S = le.shape[1]
    cdef double[:, ::1] A = np.ascontiguousarray(np.exp(np.asarray(log_trans, dtype=np.float64)))
    cdef double[::1] pi = np.ascontiguousarray(np.exp(np.asarray(log_start, dtype=np.float64)))
    post_arr = np.empty((n, S))
    xi_arr = np.zeros((S, S))
    cdef double[:, ::1] alpha = np.empty((n, S))
    cdef double[:, ::1] beta = np.empty((n, S))
    cdef double[:, ::1] emis = np.empty((n, S))
    cdef double[:, ::1] post = post_arr
    cdef double[:, ::1] xi = xi_arr
    cdef double[::1] scale = np.empty(n)
    cdef double[::1] tmp = np.empty(S)
    cdef Py_ssize_t t, i, j
    cdef double mx, acc, total, loglik = 0.0

    for t in range(n):
        mx = le[t, 0]
        for i in range(1, S):
            if le[t, i] > mx:
                mx = le[t, i]
        loglik += mx
        for i in range(S):
            emis[t, i] = exp(le[t, i] - mx)

    total = 0.0
    for i in range(S):
        alpha[0, i] = pi[i] * emis[0, i]
        total += alpha[0, i]
    scale[0] = total
    for i in range(S):
        alpha[0, i] /= total
    for t in range(1, n):
        total = 0.0
        for j in range(S):
            acc = 0.0
            for i in range(S):
                acc += alpha[t - 1, i] * A[i, j]
            alpha[t, j] = acc * emis[t, j]
            total += alpha[t, j]
        scale[t] = total
        for j in range(S):
            alpha[t, j] /= total

    for i in range(S):
        beta[n - 1, i] = 1.0
    for t in range(n - 2, -1, -1):
        for j in range(S):
            tmp[j] = emis[t + 1, j] * beta[t + 1, j]
        for i in range(S):
            acc = 0.0
            for j in range(S):
                acc += A[i, j] * tmp[j]
                xi[i, j] += alpha[t, i] * A[i, j] * tmp[j] / scale[t + 1]
            beta[t, i] = acc / scale[t + 1]

    for t in range(n):
        total = 0.0
        for i in range(S):
            post[t, i] = alpha[t, i] * beta[t, i]
            total += post[t, i]
        for i in range(S):
            post[t, i] /= total
        loglik += log(scale[t])
    return post_arr, xi_arr, loglik


def factorial_viterbi(log_start, log_trans, log_emis):
    cdef double[:, ::1] le = np.ascontiguousarray(log_emis, dtype=np.float64)
    cdef double[:, ::1] ls = np.ascontiguousarray(log_start, dtype=np.float64)
    cdef double[:, :, ::1] lt = np.ascontiguousarray(log_trans, dtype=np.float64)
    cdef Py_ssize_t n = le.shape[0], S = le.shape[1], K = ls.shape[0]
    back_arr = np.empty((n, K, S), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] back = back_arr
    cdef double[::1] m = np.empty(S)
    cdef double[::1] nxt = np.empty(S)
    cdef double[::1] swap
    cdef Py_ssize_t t, k, s, b, best
    cdef double f0, f1, v
    path_arr = np.empty((n, K), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] path = path_arr

    for s in range(S):
        v = le[0, s]
        for k in range(K):
            v += ls[k, (s >> k) & 1]
        m[s] = v
    for t in range(1, n):
        for k in range(K):
            for s in range(S):
                b = (s >> k) & 1
                f0 = m[s & ~(1 << k)] + lt[k, 0, b]
                f1 = m[s | (1 << k)] + lt[k, 1, b]
                if f1 > f0:
                    back[t, k, s] = 1
                    nxt[s] = f1
                else:
                    back[t, k, s] = 0
                    nxt[s] = f0
            swap = m
            m = nxt
            nxt = swap
        for s in range(S):
            m[s] += le[t, s]

    best = 0
    for s in range(1, S):
        if m[s] > m[best]:
            best = s
    s = best
    t = n - 1
    while True:
        for k in range(K):
            path[t, k] = (s >> k) & 1
        if t == 0:
            break
        for k in range(K - 1, -1, -1):
            s = (s & ~(1 << k)) | (<Py_ssize_t>back[t, k, s] << k)
        t -= 1
    return path_arr
