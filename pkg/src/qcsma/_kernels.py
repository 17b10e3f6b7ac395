"""Compiled per-slot primitives.

Everything here works on 0-based numpy arrays and a CSR conflict list
(``ptr``, ``idx``) so the slot loop can run under numba. The Python-facing
wrappers live in :mod:`qcsma.schedulers`; ``func.py_func`` gives the
uncompiled version of each kernel.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

WEIGHT_LINEAR = 0
WEIGHT_LOG_SCALED = 1
WEIGHT_LOGLOG = 2

ALGO_QCSMA = 0
ALGO_DGMS = 1
ALGO_DMS = 2
ALGO_HYBRID = 3
ALGO_GMS = 4
ALGO_MWS = 5
ALGO_CYCLIC = 6


@njit(cache=True)
def activation_from_queue(kind, alpha, p_min, q):
    """p = e^w / (e^w + 1) for w = f(q); 0 when w is -inf (empty log-scaled queue)."""
    if kind == WEIGHT_LOG_SCALED:
        if q <= 0:
            return 0.0
        z = alpha * q
        p = z / (1.0 + z)
    else:
        if kind == WEIGHT_LINEAR:
            w = alpha * q
        else:
            w = math.log(math.log(q + math.e))
        if w >= 0:
            p = 1.0 / (1.0 + math.exp(-w))
        else:
            e = math.exp(w)
            p = e / (1.0 + e)
    if p < p_min:
        p = p_min
    elif p > 1.0 - p_min:
        p = 1.0 - p_min
    return p


@njit(cache=True)
def link_weight(kind, alpha, q):
    """Weight used by the max-weight baseline, floored at 0."""
    if kind == WEIGHT_LINEAR:
        w = alpha * q
    elif kind == WEIGHT_LOG_SCALED:
        w = math.log(alpha * q) if q > 0 else 0.0
    else:
        w = math.log(math.log(q + math.e))
    return w if w > 0 else 0.0


@njit(cache=True)
def frame_index(q, frames, base):
    """max(0, floor(frames - log_base(q + 1))); ``frames`` means "stay silent"."""
    n = q + 1
    if base == math.floor(base):
        b = int(base)
        k = 0
        v = 1
        while v < n:
            v *= b
            k += 1
        f = frames - k
    else:
        f = int(math.floor(frames - math.log(n) / math.log(base)))
    if f < 0:
        f = 0
    return f


@njit(cache=True)
def resolve_contention(ptr, idx, backoff, eligible, sent, won):
    """Mini-slot contention with carrier sensing.

    An eligible link transmits at its backoff unless some conflicting link
    transmitted strictly earlier (collided transmissions are sensed too). A
    transmitter wins iff no conflicting link transmitted in the same
    mini-slot. Fills ``sent`` and ``won`` in place.
    """
    n = backoff.shape[0]
    order = np.argsort(backoff, kind="mergesort")
    silenced = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        sent[i] = False
        won[i] = False
    a = 0
    while a < n:
        t = backoff[order[a]]
        b = a
        while b < n and backoff[order[b]] == t:
            b += 1
        for k in range(a, b):
            i = order[k]
            if eligible[i] and not silenced[i]:
                sent[i] = True
        for k in range(a, b):
            i = order[k]
            if sent[i]:
                clash = False
                for e in range(ptr[i], ptr[i + 1]):
                    j = idx[e]
                    if sent[j] and backoff[j] == t:
                        clash = True
                        break
                won[i] = not clash
        for k in range(a, b):
            i = order[k]
            if sent[i]:
                for e in range(ptr[i], ptr[i + 1]):
                    silenced[idx[e]] = True
        a = b


@njit(cache=True)
def glauber_update(ptr, idx, decision, x_prev, p, u, x_out):
    """Activation rule for links in the decision schedule; others hold state."""
    n = x_prev.shape[0]
    for i in range(n):
        if decision[i]:
            busy = False
            for e in range(ptr[i], ptr[i + 1]):
                if x_prev[idx[e]]:
                    busy = True
                    break
            x_out[i] = (not busy) and u[i] < p[i]
        else:
            x_out[i] = x_prev[i]


@njit(cache=True)
def qcsma_slot(ptr, idx, backoff, x_prev, p, u, decision, x_out):
    n = x_prev.shape[0]
    eligible = np.ones(n, dtype=np.bool_)
    sent = np.empty(n, dtype=np.bool_)
    resolve_contention(ptr, idx, backoff, eligible, sent, decision)
    glauber_update(ptr, idx, decision, x_prev, p, u, x_out)


@njit(cache=True)
def dgms_backoffs(q, frames, base, width, offset, uniform, backoff, eligible):
    """Queue-dependent backoff: offset + width * frame + uniform."""
    n = q.shape[0]
    for i in range(n):
        f = frame_index(q[i], frames, base)
        backoff[i] = offset + width * f + uniform[i]
        eligible[i] = f < frames


@njit(cache=True)
def reservation_slot(ptr, idx, backoff, eligible, x_out):
    """RESV contention: winners transmit, everyone else stays off this slot."""
    n = backoff.shape[0]
    sent = np.empty(n, dtype=np.bool_)
    resolve_contention(ptr, idx, backoff, eligible, sent, x_out)


@njit(cache=True)
def dgms_slot(ptr, idx, q, frames, base, width, offset, uniform, x_out):
    n = q.shape[0]
    backoff = np.empty(n, dtype=np.int64)
    eligible = np.empty(n, dtype=np.bool_)
    dgms_backoffs(q, frames, base, width, offset, uniform, backoff, eligible)
    reservation_slot(ptr, idx, backoff, eligible, x_out)


@njit(cache=True)
def hybrid_slot(ptr, idx, q, q0, backoff0, uniform1, frames, base, width1, w0,
                p, u, y_prev, na, decision, x_out, y_out):
    """One slot of the threshold hybrid.

    ``y_prev`` marks links made active by the CSMA phase last slot; ``na`` is
    the one-bit memory and is updated in place. Links above the threshold run
    the CSMA phase in mini-slots [0, w0 - 1]; mini-slot w0 carries the
    reservations of CSMA-active links; the rest contend by queue-length frame
    from mini-slot w0 + 1 on.
    """
    n = q.shape[0]
    upper = np.empty(n, dtype=np.bool_)
    for i in range(n):
        upper[i] = q[i] > q0
    sent = np.empty(n, dtype=np.bool_)
    resolve_contention(ptr, idx, backoff0, upper, sent, decision)
    for i in range(n):
        if upper[i]:
            if decision[i]:
                x_out[i] = na[i] == 0 and u[i] < p[i]
            else:
                x_out[i] = y_prev[i]
        else:
            x_out[i] = False
    heard = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        if upper[i] and x_out[i]:
            for e in range(ptr[i], ptr[i + 1]):
                heard[idx[e]] = True
    for i in range(n):
        if upper[i] and x_out[i]:
            na[i] = 0
        else:
            na[i] = 1 if heard[i] else 0
    backoff1 = np.empty(n, dtype=np.int64)
    eligible1 = np.empty(n, dtype=np.bool_)
    dgms_backoffs(q, frames, base, width1, w0 + 1, uniform1, backoff1, eligible1)
    for i in range(n):
        if upper[i] or heard[i]:
            eligible1[i] = False
    won1 = np.empty(n, dtype=np.bool_)
    reservation_slot(ptr, idx, backoff1, eligible1, won1)
    for i in range(n):
        y_out[i] = upper[i] and x_out[i]
        if won1[i]:
            x_out[i] = True


@njit(cache=True)
def gms_schedule(ptr, idx, q, x_out):
    """Longest queue first, lowest index on ties, nonempty queues only."""
    n = q.shape[0]
    order = np.argsort(-q, kind="mergesort")
    blocked = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        x_out[i] = False
    for k in range(n):
        i = order[k]
        if q[i] <= 0:
            break
        if not blocked[i]:
            x_out[i] = True
            blocked[i] = True
            for e in range(ptr[i], ptr[i + 1]):
                blocked[idx[e]] = True


@njit(cache=True)
def mws_schedule(feasible, weights, x_out):
    """Row of ``feasible`` (rows in ascending bitmask order) with the largest weight."""
    best = -1
    best_w = -np.inf
    for r in range(feasible.shape[0]):
        s = 0.0
        for i in range(feasible.shape[1]):
            if feasible[r, i]:
                s += weights[i]
        if s > best_w:
            best_w = s
            best = r
    for i in range(feasible.shape[1]):
        x_out[i] = feasible[best, i]


@njit(cache=True)
def count_violations(ptr, idx, x):
    """Number of conflicting active pairs (each counted once)."""
    bad = 0
    for i in range(x.shape[0]):
        if x[i]:
            for e in range(ptr[i], ptr[i + 1]):
                j = idx[e]
                if j > i and x[j]:
                    bad += 1
    return bad


@njit(cache=True)
def simulate_block(algo, ptr, idx, q, x, y, na, t0,
                   ints_a, ints_b, unif, arrivals,
                   window, frames, base, width, w0, q0,
                   wkind, walpha, p_min, feasible, cyclic,
                   record_every, rec_t, rec_q, rec_size, counters):
    """Run ``arrivals.shape[0]`` slots starting at slot index ``t0`` (1-based).

    State arrays ``q``, ``x``, ``y``, ``na`` are advanced in place. Per slot:
    schedule from q(t) and x(t-1), serve one packet per active nonempty link,
    then add arrivals. ``counters`` accumulates [queue-time sum, recorded
    points, arrivals, departures, infeasible schedules]; recorded points go
    to ``rec_*`` at offset ``counters[1]``.
    """
    n_slots = arrivals.shape[0]
    n = q.shape[0]
    p = np.zeros(n)
    x_new = np.empty(n, dtype=np.bool_)
    y_new = np.empty(n, dtype=np.bool_)
    decision = np.zeros(n, dtype=np.bool_)
    weights = np.empty(n)
    for s in range(n_slots):
        t = t0 + s
        if algo == ALGO_QCSMA or algo == ALGO_HYBRID:
            for i in range(n):
                p[i] = activation_from_queue(wkind, walpha, p_min, q[i])
        if algo == ALGO_QCSMA:
            qcsma_slot(ptr, idx, ints_a[s], x, p, unif[s], decision, x_new)
            counters[4] += count_violations(ptr, idx, decision)
        elif algo == ALGO_DGMS:
            dgms_slot(ptr, idx, q, frames, base, width, 0, ints_a[s], x_new)
        elif algo == ALGO_DMS:
            dgms_slot(ptr, idx, q, 1, base, window, 0, ints_a[s], x_new)
        elif algo == ALGO_HYBRID:
            hybrid_slot(ptr, idx, q, q0, ints_a[s], ints_b[s], frames, base, width, w0,
                        p, unif[s], y, na, decision, x_new, y_new)
            counters[4] += count_violations(ptr, idx, decision)
            for i in range(n):
                y[i] = y_new[i]
        elif algo == ALGO_GMS:
            gms_schedule(ptr, idx, q, x_new)
        elif algo == ALGO_MWS:
            for i in range(n):
                weights[i] = link_weight(wkind, walpha, q[i])
            mws_schedule(feasible, weights, x_new)
        else:
            row = (t - 1) % cyclic.shape[0]
            for i in range(n):
                x_new[i] = cyclic[row, i]
        counters[4] += count_violations(ptr, idx, x_new)
        total = 0
        for i in range(n):
            x[i] = x_new[i]
            if x[i] and q[i] > 0:
                q[i] -= 1
                counters[3] += 1
            q[i] += arrivals[s, i]
            counters[2] += arrivals[s, i]
            total += q[i]
        counters[0] += total
        if t % record_every == 0:
            k = counters[1]
            rec_t[k] = t
            rec_q[k] = total
            size = 0
            for i in range(n):
                if x[i]:
                    size += 1
            rec_size[k] = size
            counters[1] += 1
