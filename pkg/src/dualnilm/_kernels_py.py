"""Reference HMM recursions in numpy (fallback when the extension is absent).

State ``s`` of a factorial model stores chain ``k``'s ON/OFF bit in bit ``k``.
"""
import numpy as np


def forward_backward(log_start, log_trans, log_emis):
    """Scaled forward-backward pass.

    Returns ``(posteriors[T, S], expected_transitions[S, S], loglik)``.
    """
    log_emis = np.asarray(log_emis, dtype=np.float64)
    n, S = log_emis.shape
    trans = np.exp(np.asarray(log_trans, dtype=np.float64))
    shift = log_emis.max(axis=1)
    emis = np.exp(log_emis - shift[:, None])

    alpha = np.empty((n, S))
    scale = np.empty(n)
    a = np.exp(np.asarray(log_start, dtype=np.float64)) * emis[0]
    scale[0] = a.sum()
    alpha[0] = a / scale[0]
    for t in range(1, n):
        a = (alpha[t - 1] @ trans) * emis[t]
        scale[t] = a.sum()
        alpha[t] = a / scale[t]

    beta = np.empty((n, S))
    beta[-1] = 1.0
    xi = np.zeros((S, S))
    for t in range(n - 2, -1, -1):
        b = emis[t + 1] * beta[t + 1]
        xi += np.outer(alpha[t], b) * trans / scale[t + 1]
        beta[t] = (trans @ b) / scale[t + 1]

    post = alpha * beta
    post /= post.sum(axis=1, keepdims=True)
    loglik = float(np.log(scale).sum() + shift.sum())
    return post, xi, loglik


def factorial_viterbi(log_start, log_trans, log_emis):
    """Exact MAP path over the joint space of ``K`` independent 2-state chains.

    The max over the previous joint state is taken one chain at a time,
    costing ``O(K 2^K)`` per step instead of ``O(4^K)``.
    Returns ``states[T, K]`` as uint8.
    """
    log_start = np.asarray(log_start, dtype=np.float64)
    log_trans = np.asarray(log_trans, dtype=np.float64)
    log_emis = np.asarray(log_emis, dtype=np.float64)
    n, S = log_emis.shape
    K = log_start.shape[0]
    idx = np.arange(S)
    bits = [(idx >> k) & 1 for k in range(K)]

    delta = log_emis[0].copy()
    for k in range(K):
        delta += log_start[k][bits[k]]
    back = np.empty((n, K, S), dtype=np.uint8)
    for t in range(1, n):
        m = delta
        for k in range(K):
            b = bits[k]
            # candidate old bit a for chain k, target index keeps new bit b
            from0 = m[idx & ~(1 << k)] + log_trans[k, 0, b]
            from1 = m[idx | (1 << k)] + log_trans[k, 1, b]
            pick = from1 > from0
            back[t, k] = pick
            m = np.where(pick, from1, from0)
        delta = m + log_emis[t]

    path = np.empty((n, K), dtype=np.uint8)
    s = int(np.argmax(delta))
    for t in range(n - 1, -1, -1):
        for k in range(K):
            path[t, k] = (s >> k) & 1
        if t == 0:
            break
        for k in range(K - 1, -1, -1):
            a = back[t, k, s]
            s = (s & ~(1 << k)) | (int(a) << k)
    return path
