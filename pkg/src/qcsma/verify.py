"""Small-graph oracle suite behind ``qcsma verify``.

Every check returns a :class:`Check` with a pass flag and a one-line detail;
nothing here raises on a failed comparison.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .chain_analysis import (
    build_chain,
    check_detailed_balance,
    empirical_stationary,
    qcsma_decision_distribution,
    stationarity_residual,
    total_variation,
    transition_probability,
    weight_concentration,
)
from .conflict_graph import (
    ConflictGraph,
    conflicting_pair,
    path,
    ring,
    ring9,
    single_link,
)
from .node_protocol import (
    NodeQCSMA,
    conflict_set_from_topology,
    hidden_terminal_topology,
    scenario_exposed_terminal,
    scenario_hidden_terminal,
)
from .schedulers import SchedulerConfig, one_step_counts

BALANCE_TOL = 1e-12


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def small_fixtures() -> list[ConflictGraph]:
    """Single link, conflicting pair, 3-link path, 5-link ring (1-hop), 9-link ring (2-hop)."""
    return [single_link(), conflicting_pair(), path(3), ring(5, 1), ring9(2)]


def fixture_p(n: int) -> np.ndarray:
    """Deterministic, non-uniform interior activation probabilities."""
    return 0.15 + 0.7 * ((np.arange(n) * 0.618034) % 1.0)


def check_product_form(W: int = 2, perturb: float = 0.0) -> Check:
    """Stationarity and detailed balance of the exact chain on the small fixtures.

    ``perturb`` moves probability between two entries of one row of the pair
    fixture's matrix (rows still sum to 1); a positive value must make the
    check fail.
    """
    t0 = time.perf_counter()
    worst_s = worst_b = 0.0
    for g in small_fixtures():
        n = g.link_count
        cm = build_chain(g, qcsma_decision_distribution(g, W), fixture_p(n))
        if perturb and g.name == "pair":
            cm.P[0, 0] -= perturb
            cm.P[0, 1] += perturb
        worst_s = max(worst_s, stationarity_residual(cm))
        worst_b = max(worst_b, check_detailed_balance(cm))
    dt = time.perf_counter() - t0
    ok = worst_s < BALANCE_TOL and worst_b < BALANCE_TOL
    return Check("product form", ok,
                 f"max |piP - pi| = {worst_s:.2e}, max balance gap = {worst_b:.2e} "
                 f"over {len(small_fixtures())} fixtures ({dt:.2f} s)")


def check_empirical_tv(slots: int = 10**6, seed: int = 7, tol_link: float = 0.01,
                       tol_node: float = 0.02) -> list[Check]:
    """Frozen-queue trajectories on the conflicting pair against the product form."""
    g = conflicting_pair()
    p = np.array([2 / 3, 1 / 2])
    cm = build_chain(g, qcsma_decision_distribution(g, 2), p)
    out = []
    freq = empirical_stationary(g, SchedulerConfig("qcsma", window=2), p, slots, seed)
    tv = total_variation(freq, cm.states, cm.pi)
    out.append(Check("link-level TV", tv < tol_link, f"TV = {tv:.4f} after {slots} slots (< {tol_link})"))
    nt = hidden_terminal_topology()
    if conflict_set_from_topology(nt) != g:
        return out + [Check("node-level TV", False, "node topology does not induce the pair")]
    freq = empirical_stationary(g, NodeQCSMA(nt, window=2), p, slots, seed + 1)
    tv = total_variation(freq, cm.states, cm.pi)
    out.append(Check("node-level TV", tv < tol_node, f"TV = {tv:.4f} after {slots} slots (< {tol_node})"))
    return out


def check_one_step(g: ConflictGraph | None = None, W: int = 2, trials: int = 10**6,
                   seed: int = 11, z: float = 4.0) -> Check:
    """Monte Carlo one-step frequencies from every state against the closed form."""
    g = g or ring(5, 1)
    p = fixture_p(g.link_count)
    dd = qcsma_decision_distribution(g, W)
    cm = build_chain(g, dd, p)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for a, x in enumerate(cm.states):
        counts = one_step_counts(g, W, p, x, trials, rng)
        if any(m not in cm.states for m in counts):
            return Check("one-step transitions", False, f"infeasible successor of {x:#b}")
        for b, x2 in enumerate(cm.states):
            exact = transition_probability(g, x, x2, dd, p)
            f = counts.get(x2, 0) / trials
            se = math.sqrt(max(exact * (1 - exact), 1e-300) / trials)
            if exact == 0:
                if f > 0:
                    return Check("one-step transitions", False, f"{x:#b}->{x2:#b} has probability 0 but occurred")
                continue
            worst = max(worst, abs(f - exact) / se)
    return Check("one-step transitions", worst < z,
                 f"max deviation {worst:.2f} standard errors over {len(cm.states)} states "
                 f"x {trials} trials ({g.name})")


def check_scenarios() -> list[Check]:
    out = []
    for (t1, t2), want in {(0, 1): {1}, (1, 1): {2}, (2, 0): {2}}.items():
        got = set(scenario_hidden_terminal(t1, t2))
        out.append(Check(f"hidden terminal T=({t1},{t2})", got == want, f"m={sorted(got)} (expected {sorted(want)})"))
    for t1, t3 in ((0, 0), (0, 2), (1, 0), (3, 3)):
        got = set(scenario_exposed_terminal(t1, t3))
        out.append(Check(f"exposed terminal T=({t1},{t3})", got == {1, 3}, f"m={sorted(got)} (expected [1, 3])"))
    return out


def check_concentration(draws: int = 20, seed: int = 3) -> Check:
    rng = np.random.default_rng(seed)
    worst = -math.inf
    cases = 0
    for g in small_fixtures():
        if g.link_count > 10:
            continue
        for _ in range(draws):
            w = rng.uniform(0, 20, size=g.link_count)
            eps = rng.uniform(0.05, 0.95)
            c = weight_concentration(g, w, eps)
            cases += 1
            worst = max(worst, c.mass - c.bound)
            if c.mass > c.bound:
                return Check("weight concentration", False, f"mass {c.mass:.3e} above bound {c.bound:.3e}")
    return Check("weight concentration", True, f"bad-set mass below 2^|E| e^(-eps w*) in {cases} cases")


def run_suite(slots: int = 10**6, trials: int = 10**6, perturb: float = 0.0) -> list[Check]:
    checks = [check_product_form(perturb=perturb)]
    checks += check_empirical_tv(slots)
    checks.append(check_one_step(trials=trials))
    checks += check_scenarios()
    checks.append(check_concentration())
    return checks
