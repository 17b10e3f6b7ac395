"""Conflict graphs over links, schedule feasibility and small-instance enumeration.

Links are numbered 1..|E| at every public boundary. Internally link ``i`` is
stored at index ``i - 1`` and a schedule is either a 0/1 vector of length |E|
or an integer bitmask whose bit ``i - 1`` is set when link ``i`` is active.
Enumeration order is ascending bitmask value, so link 1 is the least
significant position.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

ENUMERATION_CAP = 24


class TopologyError(ValueError):
    """Malformed link/node description."""


class DimensionError(ValueError):
    """Schedule length does not match the number of links."""


class EnumerationTooLarge(ValueError):
    """Exhaustive enumeration requested on a graph above the configured cap."""


@dataclass(frozen=True)
class ConflictGraph:
    """Links with symmetric conflict sets.

    ``conflicts[k]`` holds the 0-based indices conflicting with link ``k + 1``.
    Use :meth:`from_pairs` or :meth:`from_sets` to build one from 1-based ids.
    """

    link_count: int
    conflicts: tuple[frozenset[int], ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.link_count < 1:
            raise TopologyError("a conflict graph needs at least one link")
        if len(self.conflicts) != self.link_count:
            raise TopologyError(
                f"expected {self.link_count} conflict sets, got {len(self.conflicts)}"
            )
        for i, cs in enumerate(self.conflicts):
            if i in cs:
                raise TopologyError(f"link {i + 1} conflicts with itself")
            for j in cs:
                if not 0 <= j < self.link_count:
                    raise TopologyError(f"link {i + 1} conflicts with unknown link {j + 1}")
                if i not in self.conflicts[j]:
                    raise TopologyError(f"conflict {i + 1}-{j + 1} is not symmetric")

    @classmethod
    def from_pairs(cls, link_count: int, pairs: Iterable[tuple[int, int]], name: str = ""):
        """Build from 1-based conflicting pairs; each pair is added both ways."""
        sets = [set() for _ in range(link_count)]
        for a, b in pairs:
            if not (1 <= a <= link_count and 1 <= b <= link_count):
                raise TopologyError(f"conflict pair ({a}, {b}) outside 1..{link_count}")
            if a == b:
                raise TopologyError(f"link {a} conflicts with itself")
            sets[a - 1].add(b - 1)
            sets[b - 1].add(a - 1)
        return cls(link_count, tuple(frozenset(s) for s in sets), name)

    @classmethod
    def from_sets(cls, sets: Sequence[Iterable[int]], name: str = ""):
        """Build from 1-based conflict sets, ``sets[0]`` being C(1)."""
        return cls(len(sets), tuple(frozenset(j - 1 for j in s) for s in sets), name)

    def conflict_set(self, link: int) -> frozenset[int]:
        """C(link) as 1-based ids."""
        return frozenset(j + 1 for j in self.conflicts[link - 1])

    @property
    def links(self) -> range:
        return range(1, self.link_count + 1)

    @property
    def full_mask(self) -> int:
        return (1 << self.link_count) - 1

    @cached_property
    def masks(self) -> tuple[int, ...]:
        """Per-link bitmask of the conflict set."""
        return tuple(sum(1 << j for j in cs) for cs in self.conflicts)

    @cached_property
    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.link_count, self.link_count), dtype=bool)
        for i, cs in enumerate(self.conflicts):
            adj[i, list(cs)] = True
        return adj

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) of the conflict lists, for the compiled kernels."""
        ptr = np.zeros(self.link_count + 1, dtype=np.int64)
        idx = []
        for i, cs in enumerate(self.conflicts):
            idx.extend(sorted(cs))
            ptr[i + 1] = len(idx)
        return ptr, np.asarray(idx, dtype=np.int64)

    def conflict_mask(self, mask: int) -> int:
        """Union of C(i) over links i in ``mask``."""
        out = 0
        i = 0
        while mask:
            if mask & 1:
                out |= self.masks[i]
            mask >>= 1
            i += 1
        return out


# ---------------------------------------------------------------- schedules

def links_to_mask(links: Iterable[int]) -> int:
    mask = 0
    for i in links:
        mask |= 1 << (i - 1)
    return mask


def mask_to_links(mask: int) -> frozenset[int]:
    out = []
    i = 1
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return frozenset(out)


def vector_to_mask(x) -> int:
    mask = 0
    for i, bit in enumerate(np.asarray(x).astype(bool).tolist()):
        if bit:
            mask |= 1 << i
    return mask


def mask_to_vector(mask: int, link_count: int) -> np.ndarray:
    return np.array([(mask >> i) & 1 for i in range(link_count)], dtype=bool)


def is_feasible_mask(g: ConflictGraph, mask: int) -> bool:
    m = mask
    i = 0
    while m:
        if m & 1 and g.masks[i] & mask:
            return False
        m >>= 1
        i += 1
    return True


def is_feasible(g: ConflictGraph, x) -> bool:
    """True iff no two active links in the 0/1 vector ``x`` conflict."""
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != g.link_count:
        raise DimensionError(f"schedule has length {x.shape}, graph has {g.link_count} links")
    return is_feasible_mask(g, vector_to_mask(x))


def is_maximal_mask(g: ConflictGraph, mask: int) -> bool:
    if not is_feasible_mask(g, mask):
        return False
    for i in range(g.link_count):
        if not (mask >> i) & 1 and not (g.masks[i] & mask):
            return False
    return True


def _check_cap(g: ConflictGraph, cap: int):
    if g.link_count > cap:
        raise EnumerationTooLarge(
            f"{g.link_count} links exceeds the enumeration cap of {cap}"
        )


def enumerate_feasible(g: ConflictGraph, cap: int = ENUMERATION_CAP) -> list[int]:
    """Every feasible schedule as a bitmask, including the empty one, ascending."""
    _check_cap(g, cap)
    n = g.link_count
    masks = g.masks
    out = []

    def extend(i, chosen, blocked):
        if i == n:
            out.append(chosen)
            return
        extend(i + 1, chosen, blocked)
        if not (blocked >> i) & 1:
            extend(i + 1, chosen | (1 << i), blocked | masks[i])

    extend(0, 0, 0)
    out.sort()
    return out


def enumerate_maximal(g: ConflictGraph, cap: int = ENUMERATION_CAP) -> list[int]:
    """Feasible schedules to which no further link can be added."""
    return [m for m in enumerate_feasible(g, cap) if is_maximal_mask(g, m)]


# ---------------------------------------------------------------- builders

def build_khop_conflicts(
    adjacency,
    links: Sequence[tuple],
    k: int,
    name: str = "",
) -> ConflictGraph:
    """Conflict graph for the k-hop interference model.

    ``adjacency`` is anything ``networkx.Graph`` accepts (a graph, an edge list
    or a dict of neighbour lists); ``links[i]`` is the (sender, receiver) pair
    of link ``i + 1``. Two links conflict when some endpoint of one lies within
    ``k - 1`` hops of an endpoint of the other, so ``k = 1`` is the
    node-exclusive (shared endpoint) constraint.
    """
    if k < 1:
        raise TopologyError(f"hop count must be at least 1, got {k}")
    graph = adjacency if isinstance(adjacency, nx.Graph) else nx.Graph(adjacency)
    for idx, (u, v) in enumerate(links, start=1):
        for node in (u, v):
            if node not in graph:
                raise TopologyError(f"link {idx} endpoint {node!r} is not a node")
        if u == v:
            raise TopologyError(f"link {idx} has identical endpoints")
    near = {
        node: set(dist)
        for node, dist in nx.all_pairs_shortest_path_length(graph, cutoff=k - 1)
    }
    pairs = []
    for a in range(len(links)):
        reach = near[links[a][0]] | near[links[a][1]]
        for b in range(a + 1, len(links)):
            if links[b][0] in reach or links[b][1] in reach:
                pairs.append((a + 1, b + 1))
    return ConflictGraph.from_pairs(len(links), pairs, name)


GRID_ROWS = 4
GRID_COLS = 4

GRID_SCHEDULES = (
    frozenset({1, 3, 8, 10, 15, 17, 22, 24}),
    frozenset({4, 5, 6, 7, 18, 19, 20, 21}),
    frozenset({1, 3, 9, 11, 14, 16, 22, 24}),
    frozenset({2, 4, 7, 12, 13, 18, 21, 23}),
)


def grid_links(rows: int = GRID_ROWS, cols: int = GRID_COLS) -> list[tuple]:
    """Node pairs of a rows x cols grid, labelled row by row.

    Each row contributes its horizontal links followed by the vertical links
    down to the next row, so the 4x4 grid numbers row-1 horizontals 1-3,
    verticals 4-7, row-2 horizontals 8-10 and so on up to 24.
    """
    links = []
    for r in range(rows):
        for c in range(cols - 1):
            links.append(((r, c), (r, c + 1)))
        if r < rows - 1:
            for c in range(cols):
                links.append(((r, c), (r + 1, c)))
    return links


def grid24() -> ConflictGraph:
    """24-link 4x4 grid under 1-hop interference."""
    links = grid_links()
    g = build_khop_conflicts(nx.Graph([tuple(l) for l in links]), links, 1, name="grid24")
    for s in GRID_SCHEDULES:
        mask = links_to_mask(s)
        if not is_maximal_mask(g, mask):
            raise AssertionError(f"grid labelling broken: {sorted(s)} is not maximal")
        covered = {node for i in s for node in links[i - 1]}
        if len(covered) != GRID_ROWS * GRID_COLS:
            raise AssertionError(f"grid labelling broken: {sorted(s)} is not a perfect matching")
    return g


RING_LINKS = 9


def ring_links(n: int = RING_LINKS) -> list[tuple]:
    """Link i joins nodes i-1 and i (mod n) of an n-cycle."""
    return [(i, (i + 1) % n) for i in range(n)]


def ring(n: int, k: int) -> ConflictGraph:
    links = ring_links(n)
    return build_khop_conflicts(nx.cycle_graph(n), links, k, name=f"ring{n}")


def ring9(k: int = 2) -> ConflictGraph:
    return ring(RING_LINKS, k)


def path(n: int) -> ConflictGraph:
    """n links on a line; consecutive links share a node."""
    links = [(i, i + 1) for i in range(n)]
    return build_khop_conflicts(nx.path_graph(n + 1), links, 1, name=f"path{n}")


def single_link() -> ConflictGraph:
    return ConflictGraph(1, (frozenset(),), name="single")


def conflicting_pair() -> ConflictGraph:
    return ConflictGraph.from_pairs(2, [(1, 2)], name="pair")
