import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcsma.conflict_graph import (
    ConflictGraph,
    conflicting_pair,
    enumerate_feasible,
    is_feasible,
    is_maximal_mask,
    path,
    ring,
    ring9,
    single_link,
    vector_to_mask,
)
from qcsma.schedulers import (
    ConfigError,
    LinkState,
    SchedulerConfig,
    WeightFunction,
    activation_probability,
    cyclic_reference_step,
    dgms_backoff,
    dgms_step,
    dms_step,
    gms_step,
    hybrid_step,
    mws_step,
    qcsma_step,
)

QCSMA = SchedulerConfig("qcsma", window=48)
DGMS = SchedulerConfig("dgms", frames=3, log_base=8.0, frame_width=16)
HYBRID = SchedulerConfig("hybrid", w0=5, frames=3, log_base=8.0, frame_width=14, q0=100.0)


def links(x):
    return {i + 1 for i in np.flatnonzero(x)}


@st.composite
def graph_and_queues(draw, max_links=8):
    n = draw(st.integers(1, max_links))
    pairs = [(a, b) for a in range(1, n + 1) for b in range(a + 1, n + 1)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    q = draw(st.lists(st.integers(0, 600), min_size=n, max_size=n))
    return ConflictGraph.from_pairs(n, chosen), np.array(q)


# --- weights and activation

def test_activation_logistic_at_zero():
    assert activation_probability(0.0) == 0.5


def test_grid_weight_at_ten():
    w = WeightFunction("log_scaled", 0.1)
    assert w(10) == pytest.approx(0.0)
    assert activation_probability(w(10)) == pytest.approx(0.5)


def test_empty_queue_never_activates():
    w = WeightFunction("log_scaled", 0.1)
    assert activation_probability(w(0)) == 0.0
    assert QCSMA.activation([0, 10, 90]) == pytest.approx([0.0, 0.5, 0.9])


def test_activation_clamped():
    assert activation_probability(1e4) == pytest.approx(1 - 1e-6)
    assert activation_probability(-1e4) == pytest.approx(1e-6)
    assert activation_probability(50.0, p_min=0.0) == pytest.approx(1.0)


@pytest.mark.parametrize("kind", ["linear", "log_scaled", "loglog"])
def test_compiled_activation_matches_reference(kind):
    cfg = SchedulerConfig("qcsma", weight=WeightFunction(kind, 0.1))
    q = np.array([0, 1, 5, 10, 100, 10_000])
    want = activation_probability(cfg.weight(q), cfg.p_min)
    assert cfg.activation(q) == pytest.approx(want, rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("kind", ["log_scaled", "loglog"])
def test_weight_sandwich(kind):
    f = WeightFunction(kind, 0.1)
    eps, M = 0.1, 10
    # beyond a threshold the shifted weights stay within (1 +/- eps) f(q)
    for q in np.geomspace(1e5, 1e12, 30):
        lo, hi = f(q - M), f(q + M)
        assert (1 - eps) * f(q) <= lo <= hi <= (1 + eps) * f(q)


def test_weight_monotone():
    q = np.arange(1, 2000)
    for kind in ("linear", "log_scaled", "loglog"):
        assert np.all(np.diff(WeightFunction(kind, 0.1)(q)) >= 0)


def test_config_validation():
    with pytest.raises(ConfigError):
        SchedulerConfig("qcsma", window=1)
    with pytest.raises(ConfigError):
        SchedulerConfig("nope")
    with pytest.raises(ConfigError):
        SchedulerConfig("hybrid", w0=1)
    with pytest.raises(ConfigError):
        SchedulerConfig("dgms", log_base=1.0)
    with pytest.raises(ConfigError):
        WeightFunction("cubic")


def test_control_lengths():
    assert QCSMA.control_minislots() == 48
    assert DGMS.control_minislots() == 48
    assert HYBRID.control_minislots() == 5 + 1 + 42


# --- Q-CSMA

def test_qcsma_forced_backoffs():
    out = qcsma_step(conflicting_pair(), QCSMA, [5, 5], [0, 0], backoff=[0, 1], draws=[0.0, 0.0])
    assert links(out.decision) == {1}
    assert links(out.x) == {1}
    assert out.messages == [(0, 1, "INTENT", False)]


def test_qcsma_blocked_by_active_conflict():
    out = qcsma_step(conflicting_pair(), QCSMA, [50, 50], [1, 0], decision=[0, 1], draws=[0.0, 0.0])
    assert links(out.x) == {1}


def test_qcsma_empty_decision_holds_state():
    g = path(3)
    out = qcsma_step(g, QCSMA, [9, 9, 9], [1, 0, 1], decision=[0, 0, 0], draws=[0, 0, 0])
    assert links(out.x) == {1, 3}


def test_qcsma_collision_keeps_both_out():
    out = qcsma_step(conflicting_pair(), QCSMA, [5, 5], [0, 1], backoff=[3, 3], draws=[0.0, 0.0])
    assert links(out.decision) == set()
    assert links(out.x) == {2}
    assert all(m[3] for m in out.messages)


def test_qcsma_active_link_can_switch_off():
    out = qcsma_step(single_link(), QCSMA, [5], [1], backoff=[0], draws=[0.99])
    assert links(out.x) == set()


def test_qcsma_rejects_infeasible_prev():
    with pytest.raises(ValueError):
        qcsma_step(conflicting_pair(), QCSMA, [1, 1], [1, 1], backoff=[0, 1], draws=[0, 0])


@given(graph_and_queues(), st.integers(0, 2**32 - 1))
@settings(max_examples=80, deadline=None)
def test_qcsma_feasibility_chain(gq, seed):
    g, q = gq
    rng = np.random.default_rng(seed)
    x = np.zeros(g.link_count, dtype=bool)
    for _ in range(30):
        out = qcsma_step(g, SchedulerConfig("qcsma", window=3), q, x, rng)
        assert is_feasible(g, out.decision)
        assert is_feasible(g, out.x)
        x = out.x


def test_qcsma_coverage():
    g = ring9(2)
    rng = np.random.default_rng(4)
    seen = np.zeros(9, dtype=bool)
    x = np.zeros(9, dtype=bool)
    for _ in range(200):
        out = qcsma_step(g, SchedulerConfig("qcsma", window=2), np.full(9, 50), x, rng)
        seen |= out.decision
        x = out.x
    assert seen.all()


# --- D-GMS / D-MS

def test_dgms_backoff_frames():
    assert dgms_backoff(0, 3, 8, 16, uniform=0) is None
    assert 32 <= dgms_backoff(7, 3, 8, 16, uniform=5) <= 47
    assert dgms_backoff(7, 3, 8, 16, uniform=0) == 32
    assert dgms_backoff(511, 3, 8, 16, uniform=15) == 15
    assert dgms_backoff(8, 3, 8, 16, uniform=0) == 16
    assert dgms_backoff(10**6, 3, 8, 16, uniform=0) == 0
    assert dgms_backoff(7, 3, 8, 16, offset=6, uniform=0) == 38


def test_dgms_backoff_matches_formula():
    rng = np.random.default_rng(0)
    for q in range(0, 5000, 7):
        frame = max(0, math.floor(3 - math.log(q + 1, 8) + 1e-12))
        got = dgms_backoff(q, 3, 8, 16, uniform=0)
        assert (got is None) == (frame >= 3)
        if got is not None:
            assert got == 16 * frame
    assert dgms_backoff(3, 3, 2.5, 4, rng=rng) is not None


def test_dgms_longer_queue_wins():
    out = dgms_step(conflicting_pair(), DGMS, [511, 7], uniform=[15, 0])
    assert links(out.x) == {1}


def test_dgms_collision():
    out = dgms_step(conflicting_pair(), DGMS, [20, 20], uniform=[3, 3])
    assert links(out.x) == set()


def test_dgms_empty_queues_silent():
    out = dgms_step(path(3), DGMS, [0, 0, 0], np.random.default_rng(0))
    assert links(out.x) == set() and out.messages == []


def test_dms_cases():
    assert links(dms_step(single_link(), 48, [3], np.random.default_rng(0)).x) == {1}
    assert links(dms_step(conflicting_pair(), 48, [3, 3], backoff=[0, 0]).x) == set()
    free = ConflictGraph(2, (frozenset(), frozenset()))
    assert links(dms_step(free, 48, [3, 3], backoff=[4, 4]).x) == {1, 2}
    assert links(dms_step(conflicting_pair(), 48, [0, 3], backoff=[0, 9]).x) == {2}


@given(graph_and_queues(), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_reservation_outputs_feasible(gq, seed):
    g, q = gq
    rng = np.random.default_rng(seed)
    assert is_feasible(g, dgms_step(g, SchedulerConfig("dgms", frame_width=2), q, rng).x)
    assert is_feasible(g, dms_step(g, 3, q, rng).x)


# --- hybrid

def test_hybrid_all_below_threshold_is_offset_dgms():
    g = ring9(2)
    rng = np.random.default_rng(3)
    for _ in range(50):
        q = rng.integers(0, 100, size=9)
        u = rng.integers(0, 14, size=9)
        h = hybrid_step(g, HYBRID, q, LinkState.empty(9), backoff=np.zeros(9, dtype=int), uniform=u,
                        draws=np.zeros(9))
        d = dgms_step(g, HYBRID.with_(algorithm="dgms"), q, uniform=u, offset=6)
        assert np.array_equal(h.x, d.x)
        assert np.array_equal(h.backoff, np.zeros(9))


def test_hybrid_infinite_threshold_matches_dgms():
    g = path(4)
    cfg = HYBRID.with_(q0=math.inf)
    rng = np.random.default_rng(5)
    for _ in range(50):
        q = rng.integers(0, 10**5, size=4)
        u = rng.integers(0, 14, size=4)
        h = hybrid_step(g, cfg, q, LinkState.empty(4), rng, uniform=u)
        assert np.array_equal(h.x, dgms_step(g, cfg.with_(algorithm="dgms"), q, uniform=u, offset=6).x)


def test_hybrid_all_above_threshold_is_qcsma():
    g = path(3)
    q = np.full(3, 500)
    state = LinkState.empty(3)
    x = np.zeros(3, dtype=bool)
    rng = np.random.default_rng(8)
    for _ in range(200):
        bo = rng.integers(0, 5, size=3)
        u = rng.random(3)
        h = hybrid_step(g, HYBRID, q, state, backoff=bo, uniform=np.zeros(3, dtype=int), draws=u)
        s = qcsma_step(g, QCSMA, q, x, backoff=bo, draws=u)
        assert np.array_equal(h.x, s.x)
        assert np.array_equal(h.decision, s.decision)
        state, x = h.state, s.x


def test_hybrid_transition_resv_silences_low_link():
    g = conflicting_pair()
    h = hybrid_step(g, HYBRID, [500, 5], LinkState.empty(2), backoff=[0, 0], uniform=[0, 0],
                    draws=[0.0, 0.0])
    assert links(h.x) == {1}
    assert h.state.na.tolist() == [0, 1]
    # next slot: link 1 is held; link 2 stays silenced by the new RESV
    h2 = hybrid_step(g, HYBRID, [499, 6], h.state, backoff=[3, 0], uniform=[0, 0], draws=[0.0, 0.0])
    assert links(h2.x) == {1}


def test_hybrid_na_blocks_activation():
    g = conflicting_pair()
    # link 2 was CSMA-active, so link 1 carries NA = 1 and must not activate
    state = LinkState(np.array([False, True]), np.array([1, 0], dtype=np.int8))
    h = hybrid_step(g, HYBRID, [500, 500], state, backoff=[0, 4], uniform=[0, 0], draws=[0.0, 0.0])
    assert links(h.decision) == {1}
    assert links(h.x) == {2}


@given(graph_and_queues(), st.integers(0, 2**32 - 1))
@settings(max_examples=80, deadline=None)
def test_hybrid_feasible(gq, seed):
    g, q = gq
    cfg = HYBRID.with_(q0=300.0)
    rng = np.random.default_rng(seed)
    state = LinkState.empty(g.link_count)
    for _ in range(25):
        q = np.maximum(q + rng.integers(-40, 41, size=g.link_count), 0)
        h = hybrid_step(g, cfg, q, state, rng)
        assert is_feasible(g, h.x)
        assert is_feasible(g, h.decision)
        state = h.state


# --- centralized baselines

def test_gms_examples():
    assert links(gms_step(path(3), [3, 2, 3])) == {1, 3}
    assert links(gms_step(path(3), [0, 0, 0])) == set()
    q = np.zeros(9, dtype=int)
    q[[0, 4]] = 1
    assert links(gms_step(ring9(2), q)) == {1, 5}


def test_mws_examples():
    assert links(mws_step(path(3), [3, 2, 3])) == {1, 3}
    assert links(mws_step(conflicting_pair(), [4, 4])) == {1}
    assert links(mws_step(single_link(), [2])) == {1}


@given(graph_and_queues())
@settings(max_examples=60, deadline=None)
def test_gms_maximal_and_mws_dominates(gq):
    g, q = gq
    q = q + 1
    x = gms_step(g, q)
    assert is_maximal_mask(g, vector_to_mask(x))
    best = mws_step(g, q)
    assert q[best].sum() >= q[x].sum()
    assert q[best].sum() == max(sum(q[i] for i in range(g.link_count) if m >> i & 1)
                                for m in enumerate_feasible(g))


def test_cyclic_reference():
    assert cyclic_reference_step(1) == {1, 4, 7}
    assert cyclic_reference_step(2) == {2, 5, 8}
    assert cyclic_reference_step(4) == {1, 4, 7}
    g = ring9(2)
    for t in range(1, 10):
        x = np.zeros(9, dtype=bool)
        x[[i - 1 for i in cyclic_reference_step(t)]] = True
        assert is_feasible(g, x)
