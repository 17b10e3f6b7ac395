"""Slot-level scheduling algorithms on a conflict graph.

Q-CSMA, the queue-length frame contention (D-GMS) and its single-frame special
case (D-MS), the threshold hybrid of the two, centralized greedy (GMS) and
max-weight (MWS) baselines, and the cyclic reference policy for the 9-link
ring.

Step functions take and return 0/1 numpy vectors indexed by link position.
Random draws come from a ``numpy.random.Generator`` in a fixed order: backoff
integers for every link in link order, then (if needed) a second set of
integers, then activation uniforms. Any of these can be passed in explicitly
to force an outcome.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy.special import expit

from . import _kernels as K
from .conflict_graph import (
    ConflictGraph,
    DimensionError,
    enumerate_feasible,
    is_feasible,
    mask_to_vector,
)

ALGORITHMS = ("qcsma", "dgms", "dms", "hybrid", "gms", "mws", "cyclic")
ALGO_CODES = {
    "qcsma": K.ALGO_QCSMA,
    "dgms": K.ALGO_DGMS,
    "dms": K.ALGO_DMS,
    "hybrid": K.ALGO_HYBRID,
    "gms": K.ALGO_GMS,
    "mws": K.ALGO_MWS,
    "cyclic": K.ALGO_CYCLIC,
}
WEIGHT_KINDS = {"linear": K.WEIGHT_LINEAR, "log_scaled": K.WEIGHT_LOG_SCALED, "loglog": K.WEIGHT_LOGLOG}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WeightFunction:
    """Link weight as a function of queue length.

    ``linear``: alpha * q; ``log_scaled``: log(alpha * q), -inf at q = 0;
    ``loglog``: log(log(q + e)).
    """

    kind: str = "log_scaled"
    alpha: float = 0.1

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ConfigError(f"unknown weight kind {self.kind!r}")
        if self.kind != "loglog" and not self.alpha > 0:
            raise ConfigError("weight alpha must be positive")

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "linear":
            return self.alpha * q
        if self.kind == "loglog":
            return np.log(np.log(q + math.e))
        with np.errstate(divide="ignore"):
            return np.log(self.alpha * q)

    @property
    def code(self) -> int:
        return WEIGHT_KINDS[self.kind]


def activation_probability(w, p_min: float = 1e-6):
    """Logistic map e^w / (e^w + 1), clamped to [p_min, 1 - p_min] for finite w.

    w = -inf maps to 0 exactly: an empty queue never switches its link on.
    """
    w = np.asarray(w, dtype=float)
    p = np.clip(expit(w), p_min, 1.0 - p_min)
    p = np.where(np.isneginf(w), 0.0, p)
    return p.item() if p.ndim == 0 else p


@dataclass(frozen=True)
class SchedulerConfig:
    """Parameters of one scheduling algorithm.

    ``window`` is the Q-CSMA / D-MS contention window, ``frames``, ``log_base``
    and ``frame_width`` shape the D-GMS backoff (for the hybrid, ``frame_width``
    is its D-GMS frame width), ``w0`` and ``q0`` are the hybrid's CSMA window
    and queue threshold.
    """

    algorithm: str = "qcsma"
    window: int = 48
    frames: int = 3
    log_base: float = 8.0
    frame_width: int = 16
    w0: int = 5
    q0: float = 100.0
    weight: WeightFunction = field(default_factory=WeightFunction)
    p_min: float = 1e-6

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm in ("qcsma", "dms") and self.window < (2 if self.algorithm == "qcsma" else 1):
            raise ConfigError(f"{self.algorithm} window too small: {self.window}")
        if self.algorithm in ("dgms", "hybrid"):
            if self.frames < 1 or self.frame_width < 1:
                raise ConfigError("frames and frame_width must be at least 1")
            if not self.log_base > 1:
                raise ConfigError("log_base must exceed 1")
        if self.algorithm == "hybrid" and self.w0 < 2:
            raise ConfigError("hybrid CSMA window w0 must be at least 2")
        if not 0 <= self.p_min < 0.5:
            raise ConfigError("p_min must lie in [0, 0.5)")

    @property
    def code(self) -> int:
        return ALGO_CODES[self.algorithm]

    def control_minislots(self) -> int:
        """Length of the control slot in mini-slots (0 for centralized policies)."""
        if self.algorithm in ("qcsma", "dms"):
            return self.window
        if self.algorithm == "dgms":
            return self.frames * self.frame_width
        if self.algorithm == "hybrid":
            return self.w0 + 1 + self.frames * self.frame_width
        return 0

    def with_(self, **kw) -> "SchedulerConfig":
        return replace(self, **kw)

    def activation(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.int64)
        return np.array(
            [K.activation_from_queue(self.weight.code, self.weight.alpha, self.p_min, int(v)) for v in q]
        )


@dataclass
class LinkState:
    """Per-link memory carried between hybrid slots.

    ``x_prev`` marks links the CSMA phase left active; ``na`` is the bit set
    when a conflicting link was CSMA-active in the previous slot.
    """

    x_prev: np.ndarray
    na: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "LinkState":
        return cls(np.zeros(n, dtype=bool), np.zeros(n, dtype=np.int8))


@dataclass
class SlotOutcome:
    x: np.ndarray
    decision: np.ndarray | None = None
    backoff: np.ndarray | None = None
    messages: list[tuple[int, int, str, bool]] = field(default_factory=list)
    state: LinkState | None = None

    def active_links(self) -> frozenset[int]:
        return frozenset(int(i) + 1 for i in np.flatnonzero(self.x))

    def decision_links(self) -> frozenset[int]:
        if self.decision is None:
            return frozenset()
        return frozenset(int(i) + 1 for i in np.flatnonzero(self.decision))


def _vec(x, n, dtype=bool):
    x = np.asarray(x, dtype=dtype)
    if x.shape != (n,):
        raise DimensionError(f"expected a vector of length {n}, got shape {x.shape}")
    return x


def _message_log(backoff, sent, won, kind):
    # (mini-slot, link id, message, collided)
    log = [(int(backoff[i]), int(i) + 1, kind, not bool(won[i])) for i in np.flatnonzero(sent)]
    log.sort()
    return log


def _contend(g, backoff, eligible):
    ptr, idx = g.csr
    n = g.link_count
    sent = np.empty(n, dtype=bool)
    won = np.empty(n, dtype=bool)
    K.resolve_contention(ptr, idx, np.ascontiguousarray(backoff, dtype=np.int64),
                         np.ascontiguousarray(eligible, dtype=bool), sent, won)
    return sent, won


def qcsma_step(g: ConflictGraph, cfg: SchedulerConfig, q, x_prev, rng=None, *,
               backoff=None, draws=None, decision=None, p=None) -> SlotOutcome:
    """One Q-CSMA slot.

    Pass ``decision`` to bypass contention entirely, ``backoff`` to force the
    INTENT timing, ``draws`` to force the activation uniforms and ``p`` to
    override the queue-derived activation probabilities.
    """
    n = g.link_count
    x_prev = _vec(x_prev, n)
    if not is_feasible(g, x_prev):
        raise ValueError("previous transmission schedule is infeasible")
    if decision is None:
        if backoff is None:
            backoff = rng.integers(0, cfg.window, size=n)
        backoff = _vec(backoff, n, np.int64)
        sent, won = _contend(g, backoff, np.ones(n, dtype=bool))
        log = _message_log(backoff, sent, won, "INTENT")
    else:
        won = _vec(decision, n)
        if not is_feasible(g, won):
            raise ValueError("decision schedule is infeasible")
        log = []
    if draws is None:
        draws = rng.random(n)
    draws = _vec(draws, n, float)
    if p is None:
        p = cfg.activation(q)
    p = _vec(p, n, float)
    ptr, idx = g.csr
    x = np.empty(n, dtype=bool)
    K.glauber_update(ptr, idx, won, x_prev, p, draws, x)
    return SlotOutcome(x=x, decision=won, backoff=backoff, messages=log)


def dgms_backoff(q_i: int, B: int, b: float, W1: int, offset: int = 0, rng=None, uniform=None):
    """Backoff mini-slot of a link with ``q_i`` packets, or None if it stays silent."""
    frame = K.frame_index(int(q_i), int(B), float(b))
    if frame >= B:
        return None
    if uniform is None:
        uniform = int(rng.integers(0, W1))
    return offset + W1 * frame + uniform


def _reservation(g, q, frames, base, width, offset, uniform, kind):
    n = g.link_count
    q = _vec(q, n, np.int64)
    uniform = _vec(uniform, n, np.int64)
    backoff = np.empty(n, dtype=np.int64)
    eligible = np.empty(n, dtype=bool)
    K.dgms_backoffs(q, frames, float(base), width, offset, uniform, backoff, eligible)
    sent, won = _contend(g, backoff, eligible)
    return SlotOutcome(x=won, backoff=backoff,
                       messages=_message_log(backoff, sent, won, kind))


def dgms_step(g: ConflictGraph, cfg: SchedulerConfig, q, rng=None, *, uniform=None,
              offset: int = 0) -> SlotOutcome:
    """One D-GMS slot: larger queues contend in earlier frames; memoryless."""
    if uniform is None:
        uniform = rng.integers(0, cfg.frame_width, size=g.link_count)
    return _reservation(g, q, cfg.frames, cfg.log_base, cfg.frame_width, offset, uniform, "RESV")


def dms_step(g: ConflictGraph, window: int, q, rng=None, *, backoff=None) -> SlotOutcome:
    """One D-MS slot: a single frame of ``window`` mini-slots, queue-independent."""
    if backoff is None:
        backoff = rng.integers(0, window, size=g.link_count)
    return _reservation(g, q, 1, 2.0, window, 0, backoff, "RESV")


def hybrid_step(g: ConflictGraph, cfg: SchedulerConfig, q, state: LinkState, rng=None, *,
                backoff=None, uniform=None, draws=None, p=None) -> SlotOutcome:
    """One hybrid slot; returns the updated :class:`LinkState` in ``.state``.

    ``backoff`` forces the CSMA-phase backoffs in [0, w0 - 1], ``uniform`` the
    within-frame offsets of the D-GMS phase.
    """
    n = g.link_count
    q = _vec(q, n, np.int64)
    if backoff is None:
        backoff = rng.integers(0, cfg.w0, size=n)
    if uniform is None:
        uniform = rng.integers(0, cfg.frame_width, size=n)
    if draws is None:
        draws = rng.random(n)
    if p is None:
        p = cfg.activation(q)
    backoff = _vec(backoff, n, np.int64)
    uniform = _vec(uniform, n, np.int64)
    na = np.array(state.na, dtype=np.int8)
    decision = np.zeros(n, dtype=bool)
    x = np.empty(n, dtype=bool)
    y = np.empty(n, dtype=bool)
    ptr, idx = g.csr
    K.hybrid_slot(ptr, idx, q, float(cfg.q0), backoff, uniform, cfg.frames, float(cfg.log_base),
                  cfg.frame_width, cfg.w0, _vec(p, n, float), _vec(draws, n, float),
                  _vec(state.x_prev, n), na, decision, x, y)
    return SlotOutcome(x=x, decision=decision, backoff=backoff, state=LinkState(y, na))


def gms_step(g: ConflictGraph, q) -> np.ndarray:
    """Centralized greedy maximal schedule (longest queue first, lowest id on ties)."""
    ptr, idx = g.csr
    x = np.empty(g.link_count, dtype=bool)
    K.gms_schedule(ptr, idx, _vec(q, g.link_count, np.int64), x)
    return x


def feasible_matrix(g: ConflictGraph) -> np.ndarray:
    """All feasible schedules as rows of a bool matrix, ascending bitmask order."""
    return np.array([mask_to_vector(m, g.link_count) for m in enumerate_feasible(g)], dtype=bool)


def mws_step(g: ConflictGraph, q, weights=None, feasible=None) -> np.ndarray:
    """Exhaustive max-weight schedule; ties go to the smallest bitmask."""
    w = np.asarray(q if weights is None else weights, dtype=float)
    if feasible is None:
        feasible = feasible_matrix(g)
    x = np.empty(g.link_count, dtype=bool)
    K.mws_schedule(feasible, _vec(w, g.link_count, float), x)
    return x


RING_CYCLE = ({1, 4, 7}, {2, 5, 8}, {3, 6, 9})


def cyclic_matrix(n_links: int = 9) -> np.ndarray:
    rows = np.zeros((len(RING_CYCLE), n_links), dtype=bool)
    for r, s in enumerate(RING_CYCLE):
        rows[r, [i - 1 for i in s]] = True
    return rows


def cyclic_reference_step(t: int) -> frozenset[int]:
    """Schedule used by the ring reference policy in slot ``t`` (1-based)."""
    return frozenset(RING_CYCLE[(t - 1) % 3])


def frozen_trajectory(g: ConflictGraph, cfg: SchedulerConfig, p, slots: int, rng,
                      x0=None) -> np.ndarray:
    """Bitmask of x(t) for t = 1..slots of Q-CSMA under fixed activation probabilities."""
    n = g.link_count
    p = _vec(p, n, float)
    x = np.zeros(n, dtype=bool) if x0 is None else _vec(x0, n).copy()
    out = np.empty(slots, dtype=np.int64)
    weights = 1 << np.arange(n, dtype=np.int64)
    ptr, idx = g.csr
    chunk = 65536
    if cfg.algorithm != "qcsma":
        raise ConfigError(f"frozen trajectories need the qcsma scheduler, not {cfg.algorithm!r}")
    done = 0
    while done < slots:
        m = min(chunk, slots - done)
        backoffs = rng.integers(0, cfg.window, size=(m, n))
        u = rng.random((m, n))
        _frozen_kernel(ptr, idx, backoffs, u, p, x, out[done:done + m], weights)
        done += m
    return out


@njit(cache=True)
def _frozen_kernel(ptr, idx, backoffs, u, p, x, out, weights):
    n = x.shape[0]
    decision = np.empty(n, dtype=np.bool_)
    x_new = np.empty(n, dtype=np.bool_)
    for s in range(backoffs.shape[0]):
        K.qcsma_slot(ptr, idx, backoffs[s], x, p, u[s], decision, x_new)
        code = 0
        for i in range(n):
            x[i] = x_new[i]
            if x[i]:
                code += weights[i]
        out[s] = code


def one_step_counts(g: ConflictGraph, window: int, p, x0_mask: int, trials: int, rng) -> dict[int, int]:
    """Histogram of x(t) bitmasks after one Q-CSMA slot from x(t-1) = ``x0_mask``."""
    n = g.link_count
    p = _vec(p, n, float)
    x0 = mask_to_vector(x0_mask, n)
    ptr, idx = g.csr
    weights = 1 << np.arange(n, dtype=np.int64)
    out = np.empty(trials, dtype=np.int64)
    chunk = 65536
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        backoffs = rng.integers(0, window, size=(m, n))
        u = rng.random((m, n))
        _one_step_kernel(ptr, idx, backoffs, u, p, x0, out[done:done + m], weights)
        done += m
    values, counts = np.unique(out, return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


@njit(cache=True)
def _one_step_kernel(ptr, idx, backoffs, u, p, x0, out, weights):
    n = x0.shape[0]
    decision = np.empty(n, dtype=np.bool_)
    x_new = np.empty(n, dtype=np.bool_)
    for s in range(backoffs.shape[0]):
        K.qcsma_slot(ptr, idx, backoffs[s], x0, p, u[s], decision, x_new)
        code = 0
        for i in range(n):
            if x_new[i]:
                code += weights[i]
        out[s] = code
