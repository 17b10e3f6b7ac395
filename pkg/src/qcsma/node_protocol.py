"""Node-level Q-CSMA with the synchronized RTD/CTD handshake.

Each control mini-slot has two sub-mini-slots: senders whose backoff expires
send an RTD (request-to-decide) in the first, an addressed receiver that got
it cleanly answers with a CTD (clear-to-decide) in the second. Sensing a
foreign or colliding RTD makes a node unusable as a receiver; sensing a CTD
makes it unusable as a sender. Carrier sensing in the data slot (data then
ACK) feeds the next slot's activation test through the ACT/NS/NR bits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np
from numba import njit

from .conflict_graph import ConflictGraph, TopologyError, mask_to_links, vector_to_mask
from .schedulers import SlotOutcome, WeightFunction, activation_probability

RTD = 0
CTD = 1


@dataclass(frozen=True)
class NodeTopology:
    """Nodes with symmetric hearing ranges and directed (sender, receiver) links."""

    neighbors: dict
    links: tuple[tuple[Hashable, Hashable], ...]
    labels: tuple[int, ...] = ()

    def __post_init__(self):
        nb = {n: frozenset(v) for n, v in self.neighbors.items()}
        for n, vs in nb.items():
            if n in vs:
                raise TopologyError(f"node {n!r} lists itself as a neighbour")
            for v in vs:
                if v not in nb or n not in nb[v]:
                    raise TopologyError(f"hearing between {n!r} and {v!r} is not symmetric")
        for k, (s, r) in enumerate(self.links, start=1):
            if s == r:
                raise TopologyError(f"link {k} has identical endpoints")
            if s not in nb or r not in nb:
                raise TopologyError(f"link {k} endpoint is not a node")
            if r not in nb[s]:
                raise TopologyError(f"link {k}: receiver {r!r} cannot hear sender {s!r}")
        object.__setattr__(self, "neighbors", nb)
        object.__setattr__(self, "links", tuple(tuple(l) for l in self.links))
        labels = tuple(self.labels) or tuple(range(1, len(self.links) + 1))
        if len(labels) != len(self.links):
            raise TopologyError("one label per link required")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_edges(cls, edges: Iterable[tuple], links: Sequence[tuple], labels=()):
        nb: dict = {}
        for a, b in edges:
            nb.setdefault(a, set()).add(b)
            nb.setdefault(b, set()).add(a)
        for s, r in links:
            nb.setdefault(s, set())
            nb.setdefault(r, set())
        return cls(nb, tuple(links), tuple(labels))

    @property
    def nodes(self) -> list:
        return sorted(self.neighbors, key=repr)

    @property
    def link_count(self) -> int:
        return len(self.links)

    def arrays(self):
        """Index arrays for the compiled slot kernel."""
        nodes = self.nodes
        pos = {n: k for k, n in enumerate(nodes)}
        nptr = [0]
        nidx = []
        for n in nodes:
            nidx.extend(sorted(pos[v] for v in self.neighbors[n]))
            nptr.append(len(nidx))
        ls = np.array([pos[s] for s, _ in self.links], dtype=np.int64)
        lr = np.array([pos[r] for _, r in self.links], dtype=np.int64)
        optr = [0]
        oidx = []
        for k in range(len(nodes)):
            oidx.extend(np.flatnonzero(ls == k).tolist())
            optr.append(len(oidx))
        return (np.array(nptr, dtype=np.int64), np.array(nidx, dtype=np.int64), ls, lr,
                np.array(optr, dtype=np.int64), np.array(oidx, dtype=np.int64))


def conflict_set_from_topology(nt: NodeTopology) -> ConflictGraph:
    """Links conflict if they share a node or one's sender is heard at the other's receiver."""
    N = nt.neighbors
    pairs = []
    for a, (sa, ra) in enumerate(nt.links):
        for b in range(a + 1, len(nt.links)):
            sb, rb = nt.links[b]
            if ({sa, ra} & {sb, rb} or sb in N[ra] or rb in N[sa]
                    or sa in N[rb] or ra in N[sb]):
                pairs.append((a + 1, b + 1))
    return ConflictGraph.from_pairs(nt.link_count, pairs, name="node-topology")


@dataclass
class NodeBits:
    """Per-node one-bit memories, indexed like ``NodeTopology.nodes``."""

    AS: np.ndarray
    AR: np.ndarray
    ACT: np.ndarray
    NS: np.ndarray
    NR: np.ndarray

    @classmethod
    def initial(cls, n_nodes: int) -> "NodeBits":
        z = lambda: np.zeros(n_nodes, dtype=np.int8)  # noqa: E731
        return cls(np.ones(n_nodes, dtype=np.int8), np.ones(n_nodes, dtype=np.int8), z(), z(), z())

    def copy(self) -> "NodeBits":
        return NodeBits(*(a.copy() for a in (self.AS, self.AR, self.ACT, self.NS, self.NR)))


@dataclass(frozen=True)
class ControlEvent:
    minislot: int
    phase: int  # RTD or CTD sub-mini-slot
    transmitter: Hashable
    receiver: Hashable
    collided: bool


@njit(cache=True)
def _node_slot(nptr, nidx, ls, lr, optr, oidx, window, eligible, u_choice, backoff,
               u_act, p, x, AS, AR, ACT, NS, NR, decision, events):
    n_nodes = nptr.shape[0] - 1
    n_links = ls.shape[0]
    chosen = np.full(n_nodes, -1, dtype=np.int64)
    for n in range(n_nodes):
        a, b = optr[n], optr[n + 1]
        if b == a:
            continue
        cnt = 0
        for k in range(a, b):
            if eligible[oidx[k]]:
                cnt += 1
        pick = int(u_choice[n] * (cnt if cnt > 0 else b - a))
        seen = 0
        for k in range(a, b):
            if cnt == 0 or eligible[oidx[k]]:
                if seen == pick:
                    chosen[n] = oidx[k]
                    break
                seen += 1
    for n in range(n_nodes):
        AS[n] = 1
        AR[n] = 1
    for i in range(n_links):
        decision[i] = False
    rtd_tx = np.zeros(n_nodes, dtype=np.bool_)
    ctd_tx = np.zeros(n_nodes, dtype=np.bool_)
    got_rtd = np.empty(n_nodes, dtype=np.int64)
    n_ev = 0
    for tau in range(window):
        for n in range(n_nodes):
            rtd_tx[n] = chosen[n] >= 0 and backoff[chosen[n]] == tau and AS[n] == 1
        for n in range(n_nodes):
            got_rtd[n] = -1
            if rtd_tx[n]:
                AS[n] = 0
                AR[n] = 0
                continue
            cnt = 0
            src = -1
            for e in range(nptr[n], nptr[n + 1]):
                if rtd_tx[nidx[e]]:
                    cnt += 1
                    src = nidx[e]
            if cnt == 1 and lr[chosen[src]] == n:
                got_rtd[n] = src
            elif cnt >= 1:
                AR[n] = 0
        for n in range(n_nodes):
            if rtd_tx[n]:
                m = lr[chosen[n]]
                events[n_ev, 0] = tau
                events[n_ev, 1] = 0
                events[n_ev, 2] = n
                events[n_ev, 3] = m
                events[n_ev, 4] = 0 if got_rtd[m] == n else 1
                n_ev += 1
        for n in range(n_nodes):
            ctd_tx[n] = got_rtd[n] >= 0 and AR[n] == 1
        for n in range(n_nodes):
            if ctd_tx[n]:
                AS[n] = 0
                AR[n] = 0
        for n in range(n_nodes):
            if ctd_tx[n]:
                continue
            cnt = 0
            src = -1
            for e in range(nptr[n], nptr[n + 1]):
                if ctd_tx[nidx[e]]:
                    cnt += 1
                    src = nidx[e]
            if cnt == 1 and rtd_tx[n] and got_rtd[src] == n:
                decision[chosen[n]] = True
            elif cnt >= 1:
                AS[n] = 0
        for n in range(n_nodes):
            if ctd_tx[n]:
                s = got_rtd[n]
                events[n_ev, 0] = tau
                events[n_ev, 1] = 1
                events[n_ev, 2] = n
                events[n_ev, 3] = s
                events[n_ev, 4] = 0 if decision[chosen[s]] else 1
                n_ev += 1
    x_new = np.empty(n_links, dtype=np.bool_)
    for i in range(n_links):
        if decision[i]:
            s, r = ls[i], lr[i]
            free = x[i] or (ACT[s] == 0 and ACT[r] == 0 and NR[s] == 0 and NS[r] == 0)
            x_new[i] = free and u_act[i] < p[i]
        else:
            x_new[i] = x[i]
    sender = np.zeros(n_nodes, dtype=np.bool_)
    receiver = np.zeros(n_nodes, dtype=np.bool_)
    for i in range(n_links):
        x[i] = x_new[i]
        if x[i]:
            sender[ls[i]] = True
            receiver[lr[i]] = True
    for n in range(n_nodes):
        ACT[n] = 1 if (sender[n] or receiver[n]) else 0
        NS[n] = 0
        NR[n] = 0
        if ACT[n] == 0:
            for e in range(nptr[n], nptr[n + 1]):
                if sender[nidx[e]]:
                    NS[n] = 1
                if receiver[nidx[e]]:
                    NR[n] = 1
    return n_ev


def node_qcsma_slot(nt: NodeTopology, W: int, queues, prev_bits: NodeBits, prev_x, rng=None, *,
                    backoff=None, choice=None, draws=None, p=None,
                    weight: WeightFunction | None = None) -> tuple[SlotOutcome, NodeBits]:
    """One slot of node-based Q-CSMA.

    ``backoff`` holds one backoff per link (only the link each sender picks
    is used), ``choice`` one uniform per node for that pick, ``draws`` the
    activation uniforms per link. ``p`` defaults to the queue-derived
    activation probabilities under ``weight``.
    """
    arrays = nt.arrays()
    n_nodes = len(nt.nodes)
    E = nt.link_count
    q = np.asarray(queues, dtype=np.int64)
    if backoff is None:
        backoff = rng.integers(0, W, size=E)
    if choice is None:
        choice = rng.random(n_nodes)
    if draws is None:
        draws = rng.random(E)
    if p is None:
        weight = weight or WeightFunction()
        p = activation_probability(weight(q))
    bits = prev_bits.copy()
    x = np.array(prev_x, dtype=bool)
    decision = np.zeros(E, dtype=bool)
    events = np.zeros((2 * n_nodes * max(W, 1), 5), dtype=np.int64)
    n_ev = _node_slot(*arrays, W, q > 0, np.asarray(choice, dtype=float),
                      np.asarray(backoff, dtype=np.int64), np.asarray(draws, dtype=float),
                      np.asarray(p, dtype=float), x, bits.AS, bits.AR, bits.ACT, bits.NS, bits.NR,
                      decision, events)
    nodes = nt.nodes
    log = [ControlEvent(int(e[0]), int(e[1]), nodes[e[2]], nodes[e[3]], bool(e[4]))
           for e in events[:n_ev]]
    return SlotOutcome(x=x, decision=decision, backoff=np.asarray(backoff), messages=log), bits


@dataclass
class NodeQCSMA:
    """Frozen-probability driver used for stationary-distribution checks."""

    topology: NodeTopology
    window: int = 2
    _arrays: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self._arrays = self.topology.arrays()

    def frozen_trajectory(self, p, slots: int, rng) -> np.ndarray:
        E = self.topology.link_count
        n_nodes = len(self.topology.nodes)
        p = np.asarray(p, dtype=float)
        out = np.empty(slots, dtype=np.int64)
        x = np.zeros(E, dtype=bool)
        bits = NodeBits.initial(n_nodes)
        chunk = 65536
        done = 0
        while done < slots:
            m = min(chunk, slots - done)
            backoff = rng.integers(0, self.window, size=(m, E))
            choice = rng.random((m, n_nodes))
            u = rng.random((m, E))
            _node_block(*self._arrays, self.window, choice, backoff, u, p, x,
                        bits.AS, bits.AR, bits.ACT, bits.NS, bits.NR, out[done:done + m])
            done += m
        return out

    def decision_counts(self, backoffs: np.ndarray, choice=None) -> np.ndarray:
        """Decision schedule bitmask for each row of forced per-link backoffs."""
        E = self.topology.link_count
        n_nodes = len(self.topology.nodes)
        out = np.empty(backoffs.shape[0], dtype=np.int64)
        if choice is None:
            choice = np.zeros((backoffs.shape[0], n_nodes))
        _node_decisions(*self._arrays, self.window, choice, backoffs, out)
        return out


@njit(cache=True)
def _node_block(nptr, nidx, ls, lr, optr, oidx, window, choice, backoff, u, p, x,
                AS, AR, ACT, NS, NR, out):
    E = ls.shape[0]
    eligible = np.ones(E, dtype=np.bool_)
    decision = np.empty(E, dtype=np.bool_)
    events = np.empty((2 * (nptr.shape[0] - 1) * window, 5), dtype=np.int64)
    for s in range(backoff.shape[0]):
        _node_slot(nptr, nidx, ls, lr, optr, oidx, window, eligible, choice[s], backoff[s],
                   u[s], p, x, AS, AR, ACT, NS, NR, decision, events)
        code = 0
        for i in range(E):
            if x[i]:
                code += 1 << i
        out[s] = code


@njit(cache=True)
def _node_decisions(nptr, nidx, ls, lr, optr, oidx, window, choice, backoff, out):
    n_nodes = nptr.shape[0] - 1
    E = ls.shape[0]
    eligible = np.ones(E, dtype=np.bool_)
    decision = np.empty(E, dtype=np.bool_)
    events = np.empty((2 * n_nodes * window, 5), dtype=np.int64)
    p = np.zeros(E)
    u = np.ones(E)
    for s in range(backoff.shape[0]):
        x = np.zeros(E, dtype=np.bool_)
        z = np.zeros(n_nodes, dtype=np.int8)
        _node_slot(nptr, nidx, ls, lr, optr, oidx, window, eligible, choice[s], backoff[s],
                   u, p, x, z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), decision, events)
        code = 0
        for i in range(E):
            if decision[i]:
                code += 1 << i
        out[s] = code


# ---------------------------------------------------------------- scenarios

def hidden_terminal_topology() -> NodeTopology:
    """Links S1->R1 and S2->R2 where R1 also hears S2."""
    return NodeTopology.from_edges(
        [("S1", "R1"), ("S2", "R2"), ("R1", "S2")],
        [("S1", "R1"), ("S2", "R2")],
    )


def exposed_terminal_topology() -> NodeTopology:
    """Links S1->R1 and S3->R3 whose senders hear each other; receivers are out of range."""
    return NodeTopology.from_edges(
        [("S1", "R1"), ("S3", "R3"), ("S1", "S3")],
        [("S1", "R1"), ("S3", "R3")],
        labels=(1, 3),
    )


def _scenario(nt: NodeTopology, backoffs) -> frozenset[int]:
    W = max(2, max(backoffs) + 1)
    n_nodes = len(nt.nodes)
    out, _ = node_qcsma_slot(
        nt, W, np.ones(nt.link_count, dtype=np.int64), NodeBits.initial(n_nodes),
        np.zeros(nt.link_count, dtype=bool), backoff=backoffs,
        choice=np.zeros(n_nodes), draws=np.ones(nt.link_count), p=np.full(nt.link_count, 0.5),
    )
    return frozenset(nt.labels[i - 1] for i in mask_to_links(vector_to_mask(out.decision)))


def scenario_hidden_terminal(T1: int, T2: int) -> frozenset[int]:
    """Decision schedule of the hidden-terminal pair under backoffs (T1, T2)."""
    return _scenario(hidden_terminal_topology(), (T1, T2))


def scenario_exposed_terminal(T1: int, T3: int) -> frozenset[int]:
    """Decision schedule of the exposed-terminal pair (links 1 and 3)."""
    return _scenario(exposed_terminal_topology(), (T1, T3))
