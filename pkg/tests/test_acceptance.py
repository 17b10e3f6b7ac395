"""Acceptance suite: one PASS/FAIL line per criterion, printed even under capture.

The simulation criteria use the published settings (horizon 10^5, 10 runs)
and take about a minute on one core.
"""
import time

import numpy as np
import pytest

from qcsma.chain_analysis import weight_concentration
from qcsma.cli import main, write_metrics, write_sample_paths
from qcsma.config import paper_defaults
from qcsma.conflict_graph import is_feasible_mask
from qcsma.node_protocol import NodeQCSMA, conflict_set_from_topology, hidden_terminal_topology
from qcsma.schedulers import SchedulerConfig
from qcsma.sim_engine import ExperimentConfig, SimulationError, run_many
from qcsma.verify import (
    check_concentration,
    check_empirical_tv,
    check_one_step,
    check_product_form,
    check_scenarios,
    small_fixtures,
)

HORIZON = 100_000
RUNS = 10
SEED = 1

infeasible_events = []


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


def experiments(kind, points, algorithms):
    lab = paper_defaults(kind)
    g = lab.graph()
    by_name = {s.algorithm: s for s in lab.schedulers}
    by_name.setdefault("gms", SchedulerConfig("gms"))
    by_name.setdefault("cyclic", SchedulerConfig("cyclic"))
    out = []
    for v in points:
        spec = lab.traffic.at(v)
        traffic = spec.build(g)
        for a in algorithms:
            out.append(ExperimentConfig(g, by_name[a], traffic, horizon=HORIZON, seed=SEED, runs=RUNS,
                                        label=a, point=v))
    return out


def run_checked(cfgs):
    try:
        metrics = run_many(cfgs)
    except SimulationError as exc:
        infeasible_events.append(str(exc))
        raise
    for m in metrics:
        for r in m.runs:
            if r.infeasible:
                infeasible_events.append(f"{m.algorithm}@{m.point}: {r.infeasible}")
    return {(m.algorithm, m.point): m for m in metrics}


@pytest.fixture(scope="module")
def grid_results():
    high = run_checked(experiments("grid", [0.90, 0.95], ["dms", "dgms", "qcsma", "hybrid"]))
    low = run_checked(experiments("grid", [0.50, 0.55, 0.60, 0.65, 0.70], ["qcsma", "hybrid"]))
    return high, low


@pytest.fixture(scope="module")
def ring_results():
    res = run_checked(experiments("ring", [0.09], ["dms", "dgms", "qcsma", "hybrid", "gms", "cyclic"]))
    res.update(run_checked(experiments("ring", [0.05], ["gms"])))
    return res


def verdicts(res, keys):
    return ", ".join(f"{a}@{p:g}={'unstable' if res[a, p].unstable else 'stable'}"
                     f"(slope {res[a, p].fit.slope:.1e}, R2 {res[a, p].fit.r2:.2f})" for a, p in keys)


def test_criterion_1_product_form(report):
    t0 = time.perf_counter()
    c = check_product_form(W=2)
    dt = time.perf_counter() - t0
    names = ", ".join(g.name for g in small_fixtures())
    ok = c.passed and dt < 10 and len(small_fixtures()) >= 5
    assert report(1, ok, f"{c.detail}; fixtures {names}; {dt:.2f} s (< 10 s)")


def test_criterion_2_simulation_matches_theory(report):
    t0 = time.perf_counter()
    checks = check_empirical_tv(slots=10**6)
    dt = time.perf_counter() - t0
    ok = all(c.passed for c in checks) and dt < 30
    assert report(2, ok, "; ".join(c.detail for c in checks) + f"; {dt:.1f} s (< 30 s)")


def test_criterion_3_one_step_oracle(report):
    c = check_one_step(trials=10**6, z=4.0)
    assert report(3, c.passed, c.detail)


def test_criterion_5_terminal_scenarios(report):
    checks = check_scenarios()
    ok = all(c.passed for c in checks)
    assert report(5, ok, "; ".join(f"{c.name} -> {c.detail.split(' (')[0]}" for c in checks))


def test_criterion_6_grid_trend(report, grid_results):
    high, low = grid_results
    want_unstable = [(a, p) for a in ("dms", "dgms") for p in (0.90, 0.95)]
    want_stable = [(a, p) for a in ("qcsma", "hybrid") for p in (0.90, 0.95)]
    ok_a = all(high[k].unstable for k in want_unstable) and not any(high[k].unstable for k in want_stable)
    pairs = [(p, low["hybrid", p].avg_queue, low["qcsma", p].avg_queue) for p in (0.50, 0.55, 0.60, 0.65, 0.70)]
    ok_b = all(h <= q for _, h, q in pairs)
    detail = (f"(a) {verdicts(high, want_unstable + want_stable)}; "
              f"(b) hybrid <= qcsma: " + ", ".join(f"rho={p:g} {h:.2f}<={q:.2f}" for p, h, q in pairs))
    report(6, ok_a and ok_b, detail)
    assert ok_b, "hybrid above qcsma at low load"
    assert ok_a, "stability verdicts differ from the expected trend"


def test_criterion_7_ring(report, ring_results):
    res = ring_results
    want_unstable = [("dgms", 0.09), ("dms", 0.09), ("gms", 0.05), ("gms", 0.09)]
    want_stable = [("qcsma", 0.09), ("hybrid", 0.09), ("cyclic", 0.09)]
    ok = all(res[k].unstable for k in want_unstable) and not any(res[k].unstable for k in want_stable)
    report(7, ok, verdicts(res, want_unstable + want_stable))
    assert ok, "stability verdicts differ from the expected ring outcome"


def test_criterion_8_concentration(report):
    c = check_concentration(draws=50)
    # plus the worked pair example
    pair = weight_concentration(small_fixtures()[1], [3.0, 1.0], 0.5)
    e = np.e
    ok = c.passed and abs(pair.mass - (1 + e) / (1 + e + e**3)) < 1e-12 and pair.mass <= pair.bound
    assert report(8, ok, f"{c.detail}; pair example mass {pair.mass:.6f} <= {pair.bound:.3f}")


def test_criterion_9_determinism(report, tmp_path, ring_results):
    # rerun one acceptance configuration from scratch and compare CSV bytes
    keys = [("dgms", 0.09), ("qcsma", 0.09)]
    first = [ring_results[k] for k in keys]
    again = run_many(experiments("ring", [0.09], ["dgms", "qcsma"]))
    for tag, ms in (("a", first), ("b", again)):
        (tmp_path / tag).mkdir()
        write_metrics(tmp_path / tag / "metrics.csv", ms, HORIZON)
        write_sample_paths(tmp_path / tag / "samplepath.csv", ms)
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("metrics.csv", "samplepath.csv"))
    cfg = tmp_path / "ring.cfg"
    main(["paper-defaults", "ring", "--out", str(cfg)])
    for d in ("c", "d"):
        assert main(["run", "--config", str(cfg), "--runs", "2", "--out-dir", str(tmp_path / d)]) == 0
    same_cli = all((tmp_path / "c" / f).read_bytes() == (tmp_path / "d" / f).read_bytes()
                   for f in ("metrics.csv", "samplepath.csv"))
    assert report(9, same and same_cli,
                  f"engine CSVs identical: {same}; CLI run CSVs identical: {same_cli}")


def test_criterion_4_feasibility(report, grid_results, ring_results):
    # decision schedules of the node protocol on the hidden-terminal layout
    nt = hidden_terminal_topology()
    g = conflict_set_from_topology(nt)
    rng = np.random.default_rng(0)
    bo = rng.integers(0, 2, size=(200_000, 2))
    ch = rng.random((200_000, len(nt.nodes)))
    node_bad = sum(not is_feasible_mask(g, int(m)) for m in np.unique(NodeQCSMA(nt, 2).decision_counts(bo, ch)))
    runs = sum(len(m.runs) for res in (grid_results[0], grid_results[1], ring_results) for m in res.values())
    ok = not infeasible_events and node_bad == 0
    detail = (f"{len(infeasible_events)} infeasible events over {runs} simulation runs "
              f"(transmission and decision schedules checked every slot); "
              f"{node_bad} infeasible node-level decision schedules")
    assert report(4, ok, detail)
