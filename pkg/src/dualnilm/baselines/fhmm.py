"""Factorial HMM baseline: one Gaussian ON/OFF chain per device.

Chains are fitted independently with Baum-Welch on sub-metered channels
and decoded jointly on the aggregate with an exact Viterbi pass over the
``2**K`` product space. A generator chain contributes its mean with a
negative sign.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..kernels import factorial_viterbi, forward_backward
from ..types import PowerSeries

VAR_FLOOR = 1e-2
MAX_CHAINS = 12
_LOG_2PI = np.log(2.0 * np.pi)


class DegenerateChannelError(ValueError):
    pass


class ProductSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class HmmChain:
    """Two-state Gaussian chain; state 1 (ON) has the larger mean."""

    name: str
    start: np.ndarray
    transition: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    is_injection: bool = False
    loglik_trace: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        trans = np.asarray(self.transition, dtype=np.float64)
        if trans.shape != (2, 2) or np.any(np.abs(trans.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError(f"{self.name}: transition rows must sum to 1")
        if np.any(np.asarray(self.variances) <= 0):
            raise ValueError(f"{self.name}: variances must be positive")

    @property
    def sign(self) -> float:
        return -1.0 if self.is_injection else 1.0


def gaussian_logpdf(x, mean, var):
    x = np.asarray(x, dtype=np.float64)
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def _initial_params(x, rng):
    if rng is None:
        mid = 0.5 * (x.min() + x.max())
        lo, hi = x[x <= mid], x[x > mid]
        means = np.array([lo.mean(), hi.mean()])
        var = np.array([lo.var(), hi.var()])
        trans = np.array([[0.9, 0.1], [0.1, 0.9]])
        start = np.array([0.5, 0.5])
    else:
        means = rng.choice(x, size=2, replace=False) if np.unique(x).size > 1 else x[:2]
        var = np.full(2, x.var()) * rng.uniform(0.2, 2.0, size=2)
        trans = rng.dirichlet([1.0, 1.0], size=2)
        start = rng.dirichlet([1.0, 1.0])
    return start, trans, means.astype(np.float64), np.maximum(var, VAR_FLOOR)


def fit_chain(x, name: str = "", *, is_injection: bool = False, rng=None,
              tol: float = 1e-6, max_iter: int = 200) -> HmmChain:
    """Baum-Welch for a 2-state Gaussian HMM on one channel.

    ``rng`` (a numpy Generator) randomizes the starting point; otherwise a
    midrange split of the data seeds the means. Stops when the
    log-likelihood gains less than ``tol`` or after ``max_iter`` steps.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 2 or np.unique(x).size < 2:
        raise DegenerateChannelError(f"channel {name!r} needs at least two distinct values")
    start, trans, means, var = _initial_params(x, rng)
    trace = []
    for _ in range(max_iter):
        log_emis = np.stack([gaussian_logpdf(x, means[i], var[i]) for i in range(2)], axis=1)
        post, xi, ll = forward_backward(_log(start), _log(trans), log_emis)
        trace.append(ll)
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            break
        start = post[0]
        rows = xi.sum(axis=1)
        trans = np.where(rows[:, None] > 0, xi / np.where(rows > 0, rows, 1.0)[:, None], trans)
        weight = post.sum(axis=0)
        for i in range(2):
            if weight[i] > 0:
                means[i] = post[:, i] @ x / weight[i]
                var[i] = max(post[:, i] @ (x - means[i]) ** 2 / weight[i], VAR_FLOOR)

    order = np.argsort(means, kind="stable")
    trans = trans[np.ix_(order, order)]
    trans = trans / trans.sum(axis=1, keepdims=True)
    return HmmChain(name, start[order], trans, means[order], var[order], is_injection, tuple(trace))


def fhmm_fit(per_appliance_series, names=None, injection_index: int | None = None, **kw) -> list[HmmChain]:
    """Fit one chain per channel; ``injection_index`` marks the generator."""
    chains = []
    for i, s in enumerate(per_appliance_series):
        x = s.active if isinstance(s, PowerSeries) else s
        name = names[i] if names else getattr(s, "channel_id", f"chain{i}")
        chains.append(fit_chain(x, name, is_injection=(i == injection_index), **kw))
    return chains


def joint_log_emission(y, chains) -> np.ndarray:
    """``log p(y_t | joint state s)`` for every ``t`` and ``s`` (bit k = chain k)."""
    K = len(chains)
    S = 1 << K
    idx = np.arange(S)
    mean = np.zeros(S)
    var = np.zeros(S)
    for k, c in enumerate(chains):
        bit = (idx >> k) & 1
        mean += c.sign * c.means[bit]
        var += c.variances[bit]
    y = np.asarray(y, dtype=np.float64)
    return gaussian_logpdf(y[:, None], mean[None, :], var[None, :])


def fhmm_decode(aggregate, chains):
    """Exact joint Viterbi decoding.

    Returns ``(states[T, K], injection_estimate[T])``; the estimate is the
    generator chain's decoded mean (zeros when no chain is a generator).
    """
    K = len(chains)
    if K > MAX_CHAINS:
        raise ProductSpaceTooLarge(f"{K} chains exceed the exact-decoding cap of {MAX_CHAINS}")
    if K == 0:
        raise ValueError("no chains to decode")
    y = aggregate.active if isinstance(aggregate, PowerSeries) else np.asarray(aggregate, dtype=np.float64)
    log_start = np.stack([_log(c.start) for c in chains])
    log_trans = np.stack([_log(c.transition) for c in chains])
    states = factorial_viterbi(log_start, log_trans, joint_log_emission(y, chains))
    injection = np.zeros(y.size)
    for k, c in enumerate(chains):
        if c.is_injection:
            injection = c.means[states[:, k]]
    return states, injection


def path_score(states, y, chains) -> float:
    """Log joint probability of one explicit joint path (used by exhaustive checks)."""
    states = np.asarray(states)
    total = 0.0
    le = joint_log_emission(y, chains)
    joint = (states << np.arange(len(chains))).sum(axis=1)
    for k, c in enumerate(chains):
        seq = states[:, k]
        total += _log(c.start[seq[0]]) + _log(c.transition[seq[:-1], seq[1:]]).sum()
    return float(total + le[np.arange(len(y)), joint].sum())
