"""Exact analysis of the Markov chain of transmission schedules.

States are feasible schedules as bitmasks (see :mod:`qcsma.conflict_graph`),
ordered by ascending mask value. The transition matrix is assembled entry by
entry from the closed-form one-step probability; the stationary law is the
product form over link odds p_i / (1 - p_i).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import logsumexp

from . import _kernels as K
from .conflict_graph import (
    ConflictGraph,
    enumerate_feasible,
    is_feasible_mask,
)

DECISION_ENUMERATION_CAP = 10**8


class ChainConsistencyError(RuntimeError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ActivationVector:
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if np.any(p <= 0) or np.any(p >= 1):
            raise DomainError("activation probabilities must lie strictly inside (0, 1)")
        object.__setattr__(self, "p", p)

    @property
    def odds(self) -> np.ndarray:
        return self.p / (1 - self.p)


def _interior(p, n) -> np.ndarray:
    p = ActivationVector(p).p
    if p.shape != (n,):
        raise DomainError(f"need {n} activation probabilities, got {p.shape}")
    return p


@dataclass(frozen=True)
class DecisionDistribution:
    """Law of the decision schedule: ``alpha[k]`` is the probability of ``support[k]``."""

    support: tuple[int, ...]
    alpha: tuple[float, ...]

    def validate(self, g: ConflictGraph):
        if len(self.support) != len(self.alpha):
            raise DomainError("support and alpha differ in length")
        if any(a <= 0 for a in self.alpha):
            raise DomainError("alpha must be positive on the support")
        if abs(math.fsum(self.alpha) - 1) > 1e-12:
            raise DomainError(f"alpha sums to {math.fsum(self.alpha)!r}")
        for m in self.support:
            if not is_feasible_mask(g, m):
                raise DomainError(f"decision schedule {m:#b} is infeasible")
        return self

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.support, self.alpha))


@njit(cache=True)
def _decision_counts(ptr, idx, n, window, start, stop, weights, out):
    eligible = np.ones(n, dtype=np.bool_)
    sent = np.empty(n, dtype=np.bool_)
    won = np.empty(n, dtype=np.bool_)
    backoff = np.empty(n, dtype=np.int64)
    for k in range(start, stop):
        v = k
        for i in range(n):
            backoff[i] = v % window
            v //= window
        K.resolve_contention(ptr, idx, backoff, eligible, sent, won)
        code = 0
        for i in range(n):
            if won[i]:
                code += weights[i]
        out[k - start] = code


def qcsma_decision_distribution(g: ConflictGraph, W: int,
                                cap: int = DECISION_ENUMERATION_CAP) -> DecisionDistribution:
    """Exact decision-schedule law of Q-CSMA by enumerating all W^|E| backoff vectors."""
    if W < 1:
        raise DomainError("window must be at least 1")
    n = g.link_count
    total = W**n
    if total > cap:
        raise DomainError(
            f"{W}^{n} backoff vectors exceed the cap of {cap}; "
            "use estimate_decision_distribution instead"
        )
    ptr, idx = g.csr
    weights = 1 << np.arange(n, dtype=np.int64)
    counts: dict[int, int] = {}
    chunk = 1 << 20
    for start in range(0, total, chunk):
        stop = min(total, start + chunk)
        out = np.empty(stop - start, dtype=np.int64)
        _decision_counts(ptr, idx, n, W, start, stop, weights, out)
        vals, cnt = np.unique(out, return_counts=True)
        for v, c in zip(vals.tolist(), cnt.tolist()):
            counts[v] = counts.get(v, 0) + c
    support = tuple(sorted(counts))
    return DecisionDistribution(support, tuple(counts[m] / total for m in support))


def estimate_decision_distribution(g: ConflictGraph, W: int, trials: int, rng) -> DecisionDistribution:
    """Monte Carlo estimate of the decision-schedule law for large |E| or W."""
    n = g.link_count
    ptr, idx = g.csr
    weights = 1 << np.arange(n, dtype=np.int64)
    out = np.empty(trials, dtype=np.int64)
    _sampled_decisions(ptr, idx, rng.integers(0, W, size=(trials, n)), weights, out)
    vals, cnt = np.unique(out, return_counts=True)
    return DecisionDistribution(tuple(vals.tolist()), tuple((cnt / trials).tolist()))


@njit(cache=True)
def _sampled_decisions(ptr, idx, backoffs, weights, out):
    n = backoffs.shape[1]
    eligible = np.ones(n, dtype=np.bool_)
    sent = np.empty(n, dtype=np.bool_)
    won = np.empty(n, dtype=np.bool_)
    for s in range(backoffs.shape[0]):
        K.resolve_contention(ptr, idx, backoffs[s], eligible, sent, won)
        code = 0
        for i in range(n):
            if won[i]:
                code += weights[i]
        out[s] = code


def _prod(mask: int, values) -> float:
    out = 1.0
    i = 0
    while mask:
        if mask & 1:
            out *= values[i]
        mask >>= 1
        i += 1
    return out


def _transition(g, x, x2, support, alpha, p, q) -> float:
    union = x | x2
    if not is_feasible_mask(g, union):
        return 0.0
    diff = x ^ x2
    blocked = union | g.conflict_mask(union)
    fixed = _prod(x & ~x2, q) * _prod(x2 & ~x, p)
    total = 0.0
    for m, a in zip(support, alpha):
        if diff & ~m:
            continue
        total += a * _prod(m & x & x2, p) * _prod(m & ~blocked, q)
    return fixed * total


def transition_probability(g: ConflictGraph, x: int, x2: int, dd: DecisionDistribution, p) -> float:
    """One-step probability from schedule ``x`` to ``x2`` (bitmasks).

    Sum over decision schedules m containing the symmetric difference of
    alpha(m) times the independent per-link outcomes: switch off, switch on,
    stay on, and stay off while free to switch on.
    """
    for s in (x, x2):
        if not is_feasible_mask(g, s):
            raise DomainError(f"schedule {s:#b} is infeasible")
    p = np.asarray(p, dtype=float)
    return _transition(g, x, x2, dd.support, dd.alpha, p.tolist(), (1 - p).tolist())


@dataclass
class ChainModel:
    states: tuple[int, ...]
    P: np.ndarray
    pi: np.ndarray
    Z: float
    log_Z: float

    def index(self, mask: int) -> int:
        return self.states.index(mask)


def build_chain(g: ConflictGraph, dd: DecisionDistribution, p) -> ChainModel:
    """Full transition matrix over the feasible schedules plus the product-form law.

    Off-diagonal entries come from the closed form; each diagonal entry is
    1 minus its row, and must match the closed form evaluated at x2 = x.
    """
    p = _interior(p, g.link_count)
    dd.validate(g)
    states = tuple(enumerate_feasible(g))
    n = len(states)
    pl, ql = p.tolist(), (1 - p).tolist()
    P = np.zeros((n, n))
    for a, x in enumerate(states):
        for b, x2 in enumerate(states):
            P[a, b] = _transition(g, x, x2, dd.support, dd.alpha, pl, ql)
        raw = P[a].sum()
        if abs(raw - 1) > 1e-9:
            raise ChainConsistencyError(f"row {a} sums to {raw!r} before completion")
        direct = P[a, a]
        P[a, a] = 0.0
        P[a, a] = 1.0 - P[a].sum()
        if abs(P[a, a] - direct) > 1e-12:
            raise ChainConsistencyError(
                f"diagonal {a}: complement {P[a, a]!r} vs direct {direct!r}"
            )
    pi, Z, log_Z = _product_form(g, states, p)
    return ChainModel(states, P, pi, Z, log_Z)


def _log_weights(states, log_odds) -> np.ndarray:
    return np.array([sum(log_odds[i] for i in range(len(log_odds)) if (s >> i) & 1) for s in states])


def _product_form(g, states, p):
    log_odds = (np.log(p) - np.log1p(-p)).tolist()
    lw = _log_weights(states, log_odds)
    log_Z = float(logsumexp(lw))
    pi = np.exp(lw - log_Z)
    return pi, float(np.exp(log_Z)) if log_Z < 700 else math.inf, log_Z


def product_form_stationary(g: ConflictGraph, p) -> tuple[np.ndarray, float]:
    """(pi, Z) over :func:`enumerate_feasible` order, pi(x) proportional to prod of odds."""
    p = _interior(p, g.link_count)
    pi, Z, _ = _product_form(g, enumerate_feasible(g), p)
    return pi, Z


def gibbs_stationary(g: ConflictGraph, weights) -> np.ndarray:
    """pi(x) proportional to exp(sum of link weights in x)."""
    w = np.asarray(weights, dtype=float).tolist()
    lw = _log_weights(enumerate_feasible(g), w)
    return np.exp(lw - logsumexp(lw))


def check_detailed_balance(cm: ChainModel) -> float:
    flow = cm.pi[:, None] * cm.P
    return float(np.abs(flow - flow.T).max())


def stationarity_residual(cm: ChainModel) -> float:
    return float(np.abs(cm.pi @ cm.P - cm.pi).max())


def solve_stationary(P: np.ndarray) -> np.ndarray:
    """Stationary vector of a row-stochastic matrix by a direct linear solve."""
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    return np.linalg.solve(A, b)


def check_irreducibility(dd: DecisionDistribution, g: ConflictGraph) -> bool:
    union = 0
    for m in dd.support:
        union |= m
    return union == g.full_mask


def is_aperiodic(cm: ChainModel) -> bool:
    """Sufficient test used here: some state has a self-loop (with irreducibility)."""
    return bool(np.any(np.diag(cm.P) > 0))


@dataclass(frozen=True)
class Concentration:
    mass: float
    bound: float
    w_star: float


def weight_concentration(g: ConflictGraph, weights, epsilon: float) -> Concentration:
    """Stationary mass of schedules lighter than (1 - eps) times the heaviest.

    Uses pi(x) proportional to exp(weight of x) and returns the exact mass
    together with the 2^|E| exp(-eps w*) upper bound.
    """
    w = np.asarray(weights, dtype=float)
    states = enumerate_feasible(g)
    lw = _log_weights(states, w.tolist())
    w_star = float(lw.max())
    bad = lw < (1 - epsilon) * w_star
    log_Z = logsumexp(lw)
    mass = float(np.exp(logsumexp(lw[bad]) - log_Z)) if bad.any() else 0.0
    bound = math.ldexp(math.exp(-epsilon * w_star), g.link_count)
    return Concentration(mass, bound, w_star)


def empirical_stationary(g: ConflictGraph, scheduler, p, slots: int, seed: int) -> dict[int, float]:
    """State-occupancy frequencies of one trajectory started from the empty schedule.

    ``scheduler`` is a Q-CSMA :class:`~qcsma.schedulers.SchedulerConfig` or any
    object with a ``frozen_trajectory(p, slots, rng)`` method returning state
    bitmasks (such as :class:`~qcsma.node_protocol.NodeQCSMA`).
    """
    from .schedulers import frozen_trajectory

    rng = np.random.default_rng(seed)
    if hasattr(scheduler, "frozen_trajectory"):
        traj = scheduler.frozen_trajectory(p, slots, rng)
    else:
        traj = frozen_trajectory(g, scheduler, p, slots, rng)
    vals, cnt = np.unique(traj, return_counts=True)
    return {int(v): c / slots for v, c in zip(vals, cnt)}


def total_variation(freq: dict[int, float], states, pi) -> float:
    exact = dict(zip(states, pi))
    keys = set(exact) | set(freq)
    return 0.5 * sum(abs(freq.get(k, 0.0) - exact.get(k, 0.0)) for k in keys)
