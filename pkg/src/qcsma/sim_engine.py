"""Discrete-time slot loop: traffic, scheduler and queues.

Slot order: the scheduler sees q(t) and x(t-1) and picks x(t); every active
link with a nonempty queue sends one packet; arrivals are added last. Runs
start from empty queues and the empty schedule.

Each run ``r`` of an experiment with base seed ``s`` draws traffic from
``default_rng([s + r, 0])`` and scheduler randomness from
``default_rng([s + r, 1])``, so different algorithms at the same seed see
identical arrivals. Random numbers are drawn in blocks of ``BLOCK`` slots:
first the backoff integers, then the second integer set (hybrid only), then
the activation uniforms.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels as K
from .conflict_graph import ConflictGraph
from .schedulers import SchedulerConfig, cyclic_matrix, feasible_matrix

log = logging.getLogger(__name__)

BLOCK = 8192
INSTABILITY_SLOPE = 1e-3
INSTABILITY_R2 = 0.9
MIN_FIT_POINTS = 100


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    graph: ConflictGraph
    scheduler: SchedulerConfig
    traffic: object  # anything with block(t0, n_slots, rng) -> (n_slots, |E|) ints
    horizon: int = 100_000
    seed: int = 1
    runs: int = 10
    record_every: int = 100
    label: str = ""
    point: float = float("nan")

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")


@dataclass
class SlotTrace:
    t: np.ndarray
    mean_queue: np.ndarray
    schedule_size: np.ndarray


@dataclass
class RunResult:
    seed: int
    avg_queue: float
    trace: SlotTrace
    final_queue: np.ndarray
    arrivals: int
    departures: int
    infeasible: int


@dataclass
class StabilityFit:
    slope: float
    r2: float
    unstable: bool


@dataclass
class Metrics:
    algorithm: str
    point: float
    runs: list[RunResult]
    mean_trace: SlotTrace
    fit: StabilityFit
    run_fits: list[StabilityFit] = field(default_factory=list)

    @property
    def avg_queue(self) -> float:
        return float(np.mean([r.avg_queue for r in self.runs]))

    @property
    def std_queue(self) -> float:
        return float(np.std([r.avg_queue for r in self.runs]))

    @property
    def unstable(self) -> bool:
        return self.fit.unstable


def _draws(cfg: SchedulerConfig, rng, m: int, n: int):
    algo = cfg.algorithm
    empty_i = np.zeros((m, 1), dtype=np.int64)
    empty_f = np.zeros((m, 1))
    if algo == "qcsma":
        return rng.integers(0, cfg.window, size=(m, n)), empty_i, rng.random((m, n))
    if algo == "dgms":
        return rng.integers(0, cfg.frame_width, size=(m, n)), empty_i, empty_f
    if algo == "dms":
        return rng.integers(0, cfg.window, size=(m, n)), empty_i, empty_f
    if algo == "hybrid":
        a = rng.integers(0, cfg.w0, size=(m, n))
        b = rng.integers(0, cfg.frame_width, size=(m, n))
        return a, b, rng.random((m, n))
    return empty_i, empty_i, empty_f


def run_single(cfg: ExperimentConfig, run: int) -> RunResult:
    g = cfg.graph
    sc = cfg.scheduler
    n = g.link_count
    seed = cfg.seed + run
    rng_traffic = np.random.default_rng([seed, 0])
    rng_sched = np.random.default_rng([seed, 1])
    ptr, idx = g.csr
    q = np.zeros(n, dtype=np.int64)
    x = np.zeros(n, dtype=bool)
    y = np.zeros(n, dtype=bool)
    na = np.zeros(n, dtype=np.int8)
    feas = feasible_matrix(g) if sc.algorithm == "mws" else np.zeros((1, n), dtype=bool)
    if sc.algorithm == "cyclic":
        if n != 9:
            raise SimulationError("the cyclic reference policy is defined on the 9-link ring only")
        cyc = cyclic_matrix(n)
    else:
        cyc = np.zeros((1, n), dtype=bool)
    n_rec = cfg.horizon // cfg.record_every
    rec_t = np.zeros(n_rec, dtype=np.int64)
    rec_q = np.zeros(n_rec, dtype=np.int64)
    rec_size = np.zeros(n_rec, dtype=np.int64)
    counters = np.zeros(5, dtype=np.int64)
    t0 = 1
    while t0 <= cfg.horizon:
        m = min(BLOCK, cfg.horizon - t0 + 1)
        arrivals = np.ascontiguousarray(cfg.traffic.block(t0, m, rng_traffic), dtype=np.int64)
        if arrivals.shape != (m, n):
            raise SimulationError(f"traffic produced shape {arrivals.shape}, expected {(m, n)}")
        a, b, u = _draws(sc, rng_sched, m, n)
        K.simulate_block(
            sc.code, ptr, idx, q, x, y, na, t0, a, b, u, arrivals,
            sc.window, sc.frames, float(sc.log_base), sc.frame_width, sc.w0, float(sc.q0),
            sc.weight.code, float(sc.weight.alpha), float(sc.p_min), feas, cyc,
            cfg.record_every, rec_t, rec_q, rec_size, counters,
        )
        t0 += m
    queue_time, _, arrived, departed, infeasible = (int(v) for v in counters)
    if infeasible:
        raise SimulationError(f"{infeasible} infeasible schedules in run {run} of {sc.algorithm}")
    if np.any(q < 0) or int(q.sum()) != arrived - departed:
        raise SimulationError("queue conservation violated")
    trace = SlotTrace(rec_t, rec_q / n, rec_size)
    return RunResult(seed, queue_time / (n * cfg.horizon), trace, q.copy(), arrived, departed, infeasible)


def stability_slope(trace: SlotTrace, s_min: float = INSTABILITY_SLOPE,
                    r2_min: float = INSTABILITY_R2) -> StabilityFit:
    """Least-squares slope of the mean queue over the second half of the trace.

    Unstable iff the slope exceeds ``s_min`` packets/slot and the line
    explains more than ``r2_min`` of the variance.
    """
    half = len(trace.t) // 2
    t = np.asarray(trace.t[half:], dtype=float)
    y = np.asarray(trace.mean_queue[half:], dtype=float)
    if len(t) < MIN_FIT_POINTS:
        raise ValueError(f"need at least {MIN_FIT_POINTS} points in the second half, got {len(t)}")
    if np.ptp(y) == 0:
        return StabilityFit(0.0, 0.0, False)
    fit = stats.linregress(t, y)
    r2 = float(fit.rvalue**2)
    return StabilityFit(float(fit.slope), r2, bool(fit.slope > s_min and r2 > r2_min))


def run_experiment(cfg: ExperimentConfig) -> Metrics:
    """All runs of one configuration; the verdict uses the run-averaged sample path."""
    runs = [run_single(cfg, r) for r in range(cfg.runs)]
    return summarize(cfg, runs)


def summarize(cfg: ExperimentConfig, runs: list[RunResult]) -> Metrics:
    t = runs[0].trace.t
    mean = np.mean([r.trace.mean_queue for r in runs], axis=0)
    size = np.mean([r.trace.schedule_size for r in runs], axis=0)
    mean_trace = SlotTrace(t, mean, size)
    enough = len(t) - len(t) // 2 >= MIN_FIT_POINTS
    fit = stability_slope(mean_trace) if enough else StabilityFit(float("nan"), float("nan"), False)
    run_fits = [stability_slope(r.trace) if enough else fit for r in runs]
    name = cfg.label or cfg.scheduler.algorithm
    log.info("%s @ %s: avg queue %.3f, slope %.2e", name, cfg.point, np.mean([r.avg_queue for r in runs]), fit.slope)
    return Metrics(name, cfg.point, runs, mean_trace, fit, run_fits)


def _run_task(args):
    cfg, run = args
    return run_single(cfg, run)


def run_many(configs: list[ExperimentConfig], jobs: int = 1) -> list[Metrics]:
    """Run several experiments, optionally across processes; output order follows ``configs``."""
    tasks = [(c, r) for c in configs for r in range(c.runs)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    out = []
    k = 0
    for c in configs:
        out.append(summarize(c, results[k:k + c.runs]))
        k += c.runs
    return out


def overhead_adjusted_capacity(D: float, W: float) -> float:
    """Fraction D / (D + W) of the capacity region left after control overhead."""
    if D <= 0 or W < 0:
        raise ValueError("data slot length must be positive and control length nonnegative")
    return D / (D + W)
