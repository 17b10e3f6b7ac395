"""Arrival processes: independent Bernoulli/Poisson arrivals, the grid's
convex-combination rates and the ring's adversarial pattern."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conflict_graph import GRID_SCHEDULES

GRID_WEIGHTS = (0.2, 0.3, 0.2, 0.3)
RING_SIZE = 9


class TrafficError(ValueError):
    pass


def grid_rates(rho: float, link_count: int = 24) -> np.ndarray:
    """rho * sum_k c_k * e_{L_k} over the four grid matchings."""
    if not 0 <= rho <= 1:
        raise TrafficError(f"traffic intensity must lie in [0, 1], got {rho}")
    lam = np.zeros(link_count)
    for c, sched in zip(GRID_WEIGHTS, GRID_SCHEDULES):
        lam[[i - 1 for i in sched]] += c
    return rho * lam


def bernoulli_arrivals(rates, rng) -> np.ndarray:
    """One slot of independent 0/1 arrivals."""
    rates = np.asarray(rates, dtype=float)
    return (rng.random(rates.shape[0]) < rates).astype(np.int64)


def ring_pair(i: int) -> tuple[int, int]:
    """L_i = {i, i + 4 mod 9} with residue 0 read as link 9."""
    return i, (i + 4 - 1) % RING_SIZE + 1


def ring_arrivals(t: int, eps: float, rng) -> np.ndarray:
    """Arrivals in slot ``t`` (1-based) of the adversarial ring pattern.

    One packet lands on each link of L_i for i = t mod 9 (slot 9k + i), and
    with probability ``eps`` every one of the nine links gets one more.
    """
    a = np.zeros(RING_SIZE, dtype=np.int64)
    i = (t - 1) % RING_SIZE + 1
    for link in ring_pair(i):
        a[link - 1] += 1
    if rng.random() < eps:
        a += 1
    return a


@dataclass(frozen=True)
class BernoulliTraffic:
    rates: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float)
        if np.any(r < 0) or np.any(r > 1):
            raise TrafficError("Bernoulli rates must lie in [0, 1]")
        object.__setattr__(self, "rates", r)

    @property
    def mean_rates(self) -> np.ndarray:
        return self.rates

    def block(self, t0: int, n_slots: int, rng) -> np.ndarray:
        return (rng.random((n_slots, self.rates.shape[0])) < self.rates).astype(np.int64)


@dataclass(frozen=True)
class PoissonTraffic:
    rates: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float)
        if np.any(r < 0):
            raise TrafficError("Poisson rates must be nonnegative")
        object.__setattr__(self, "rates", r)

    @property
    def mean_rates(self) -> np.ndarray:
        return self.rates

    def block(self, t0: int, n_slots: int, rng) -> np.ndarray:
        return rng.poisson(self.rates, size=(n_slots, self.rates.shape[0])).astype(np.int64)


@dataclass(frozen=True)
class RingAdversarialTraffic:
    eps: float

    def __post_init__(self):
        if not 0 <= self.eps <= 1:
            raise TrafficError(f"eps must lie in [0, 1], got {self.eps}")

    @property
    def mean_rates(self) -> np.ndarray:
        return np.full(RING_SIZE, 2 / 9 + self.eps)

    def block(self, t0: int, n_slots: int, rng) -> np.ndarray:
        """Arrivals for slots t0 .. t0 + n_slots - 1; one eps-draw per slot."""
        t = np.arange(t0, t0 + n_slots)
        i = (t - 1) % RING_SIZE
        a = np.zeros((n_slots, RING_SIZE), dtype=np.int64)
        rows = np.arange(n_slots)
        a[rows, i] += 1
        a[rows, (i + 4) % RING_SIZE] += 1
        a += (rng.random(n_slots) < self.eps).astype(np.int64)[:, None]
        return a


def grid_traffic(rho: float) -> BernoulliTraffic:
    return BernoulliTraffic(grid_rates(rho))
