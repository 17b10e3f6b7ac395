import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcsma.conflict_graph import (
    GRID_SCHEDULES,
    ConflictGraph,
    DimensionError,
    EnumerationTooLarge,
    TopologyError,
    build_khop_conflicts,
    conflicting_pair,
    enumerate_feasible,
    enumerate_maximal,
    grid24,
    grid_links,
    is_feasible,
    is_feasible_mask,
    is_maximal_mask,
    links_to_mask,
    mask_to_links,
    mask_to_vector,
    path,
    ring,
    ring9,
    single_link,
    vector_to_mask,
)


def brute_feasible(g):
    """Every subset scanned directly; no backtracking."""
    out = []
    for mask in range(1 << g.link_count):
        links = [i for i in range(g.link_count) if mask >> i & 1]
        if all(b not in g.conflicts[a] for a, b in itertools.combinations(links, 2)):
            out.append(mask)
    return out


@st.composite
def random_graphs(draw, max_links=9):
    n = draw(st.integers(1, max_links))
    pairs = [(a, b) for a in range(1, n + 1) for b in range(a + 1, n + 1)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True) if pairs else st.just([]))
    return ConflictGraph.from_pairs(n, chosen)


def test_pair_conflict_sets():
    g = conflicting_pair()
    assert g.conflict_set(1) == frozenset({2})
    assert g.conflict_set(2) == frozenset({1})


def test_asymmetric_rejected():
    with pytest.raises(TopologyError):
        ConflictGraph(2, (frozenset({1}), frozenset()))


def test_self_conflict_rejected():
    with pytest.raises(TopologyError):
        ConflictGraph.from_pairs(2, [(1, 1)])


def test_feasibility_basic():
    g = conflicting_pair()
    assert is_feasible(g, [1, 0])
    assert not is_feasible(g, [1, 1])
    assert is_feasible(g, [0, 0])
    with pytest.raises(DimensionError):
        is_feasible(g, [1, 0, 0])


def test_mask_roundtrip():
    assert links_to_mask({1, 3}) == 0b101
    assert mask_to_links(0b101) == frozenset({1, 3})
    v = mask_to_vector(0b110, 4)
    assert v.tolist() == [0, 1, 1, 0]
    assert vector_to_mask(v) == 0b110


def test_small_enumerations():
    assert enumerate_feasible(single_link()) == [0, 1]
    assert enumerate_feasible(conflicting_pair()) == [0, 1, 2]
    assert len(enumerate_feasible(path(3))) == 5


def test_grid_counts():
    g = grid24()
    assert g.link_count == 24
    # matchings of the 4x4 grid graph: 36 perfect matchings, 10012 in total
    feas = enumerate_feasible(g)
    assert len(feas) == 10012
    sizes = np.bincount([bin(m).count("1") for m in feas])
    assert sizes[8] == 36


def test_grid_schedules_are_perfect_matchings():
    g = grid24()
    links = grid_links()
    for s in GRID_SCHEDULES:
        assert is_maximal_mask(g, links_to_mask(s))
        nodes = [v for i in s for v in links[i - 1]]
        assert len(set(nodes)) == 16


def test_ring9_two_hop():
    g = ring9(2)
    assert all(len(c) == 4 for c in g.conflicts)
    assert g.conflict_set(1) == frozenset({2, 3, 8, 9})
    assert len(enumerate_feasible(g)) == 31
    maximum = [m for m in enumerate_maximal(g) if bin(m).count("1") == 3]
    assert sorted(mask_to_links(m) for m in maximum) == sorted(
        [frozenset({1, 4, 7}), frozenset({2, 5, 8}), frozenset({3, 6, 9})], key=sorted)


def test_khop_matches_line_graph_at_one_hop():
    G = nx.petersen_graph()
    links = list(G.edges())
    g = build_khop_conflicts(G, links, 1)
    L = nx.line_graph(G)
    for a, e in enumerate(links):
        expect = {links.index(f) if f in links else links.index(f[::-1]) for f in L[e]}
        assert set(g.conflicts[a]) == expect


def test_khop_bad_inputs():
    with pytest.raises(TopologyError):
        build_khop_conflicts([(0, 1)], [(0, 1)], 0)
    with pytest.raises(TopologyError):
        build_khop_conflicts([(0, 1)], [(0, 5)], 1)


def test_enumeration_cap():
    with pytest.raises(EnumerationTooLarge):
        enumerate_feasible(ring(30, 1))


@given(random_graphs())
@settings(max_examples=60, deadline=None)
def test_enumeration_matches_brute_force(g):
    assert enumerate_feasible(g) == brute_feasible(g)


@given(random_graphs())
@settings(max_examples=40, deadline=None)
def test_maximal_sets_cannot_grow(g):
    for m in enumerate_maximal(g):
        assert is_feasible_mask(g, m)
        for i in range(g.link_count):
            if not m >> i & 1:
                assert not is_feasible_mask(g, m | 1 << i)
