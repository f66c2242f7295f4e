"""Per-transmission relay selection and commodity choice.

Every decision picks from the receivers ``S`` plus the transmitter itself
(retain).  A destination that decoded the packet always takes it.  Ties go
to the lowest node id, except that the backpressure policies keep the
packet on a zero differential.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

POLICY_NAMES = ("dorcd", "pdorcd", "corcd", "divbar", "edivbar", "exor")
FIFO_POLICIES = frozenset({"dorcd", "pdorcd", "corcd", "exor"})
BACKPRESSURE_POLICIES = frozenset({"divbar", "edivbar"})


class PolicyDecision(NamedTuple):
    next_hop: int
    commodity: int


@dataclass
class RoutingTables:
    """What a transmitter may consult when choosing a relay.

    ``V``/``est`` come from the actual (snapshot) table, ``q_est`` are the
    latest backlog estimates received over the control plane and ``Q`` the
    live per-destination backlogs.  ``dests`` maps destination -> column.
    """

    dests: dict
    V: np.ndarray | None = None  # (D, nd) own congestion
    est: np.ndarray | None = None  # (D, D, nd) est[i, k, di]
    B: list | None = None  # B[i][di] eligible forwarders (partial diversity)
    q_est: np.ndarray | None = None  # (D, D, nd)
    Q: np.ndarray | None = None  # (D, nd)
    etx: np.ndarray | None = None  # (D, D) etx[k, d]
    neighbors: tuple | None = None


def _metric_argmin(i, S, value):
    """Lowest-value candidate among S and i; ties to the lowest id, so the
    transmitter keeps the packet only when it is strictly better or lower-numbered."""
    best, best_v = i, value(i)
    for k in S:
        v = value(k)
        if v < best_v or (v == best_v and k < best):
            best, best_v = k, v
    return best


def _retain_argmin(i, S, value):
    best, best_v = i, value(i)
    for k in sorted(S):
        v = value(k)
        if v < best_v:
            best, best_v = k, v
    return best


def decide_dorcd(i, d, S, tables: RoutingTables) -> PolicyDecision:
    if d in S:
        return PolicyDecision(d, d)
    di = tables.dests[d]
    est = tables.est[i]
    own = tables.V[i, di]
    finite = [k for k in S if est[k, di] < math.inf]
    k = _metric_argmin(i, finite, lambda k: own if k == i else est[k, di])
    return PolicyDecision(k, d)


def decide_pdorcd(i, d, S, tables: RoutingTables, B=None) -> PolicyDecision:
    if B is None:
        B = tables.B[i][tables.dests[d]]
    eligible = set(S).intersection(B)
    if d in eligible:
        return PolicyDecision(d, d)
    return decide_dorcd(i, d, eligible, tables)


def decide_corcd(i, d, S, tables: RoutingTables) -> PolicyDecision:
    """Centralized variant: ``tables.V`` holds the current fixed point for
    every node, and the comparison uses it directly."""
    if d in S:
        return PolicyDecision(d, d)
    di = tables.dests[d]
    V = tables.V[:, di]
    finite = [k for k in S if V[k] < math.inf]
    return PolicyDecision(_metric_argmin(i, finite, lambda k: V[k]), d)


def decide_divbar(i, d, S, tables: RoutingTables) -> PolicyDecision:
    if d in S:
        return PolicyDecision(d, d)
    di = tables.dests[d]
    q_i = tables.Q[i, di]
    q = tables.q_est[i]
    k = _retain_argmin(i, S, lambda k: 0.0 if k == i else q[k, di] - q_i)
    return PolicyDecision(k, d)


def decide_edivbar(i, d, S, tables: RoutingTables) -> PolicyDecision:
    if d in S:
        return PolicyDecision(d, d)
    di = tables.dests[d]
    q_i = tables.Q[i, di]
    q = tables.q_est[i]
    etx = tables.etx[:, d]
    k = _retain_argmin(i, S, lambda k: etx[i] if k == i else q[k, di] - q_i + etx[k])
    return PolicyDecision(k, d)


def decide_exor(i, d, S, tables: RoutingTables) -> PolicyDecision:
    if d in S:
        return PolicyDecision(d, d)
    etx = tables.etx[:, d]
    return PolicyDecision(_metric_argmin(i, S, lambda k: etx[k]), d)


DECIDERS = {
    "dorcd": decide_dorcd,
    "pdorcd": decide_pdorcd,
    "corcd": decide_corcd,
    "divbar": decide_divbar,
    "edivbar": decide_edivbar,
    "exor": decide_exor,
}


def select_commodity(i, kind, tables: RoutingTables, queues):
    """Destination whose packet ``i`` sends next, or None when idle.

    ``queues`` maps destination -> sequence of queued packets at ``i``;
    FIFO policies serve the oldest packet (each packet exposes ``seq``).
    """
    live = [d for d, q in queues.items() if len(q)]
    if not live:
        return None
    if kind in FIFO_POLICIES:
        return min(live, key=lambda d: (queues[d][0].seq, d))
    nbrs = tables.neighbors[i]
    best, best_v = None, math.inf
    for d in sorted(live):
        di = tables.dests[d]
        q_i = tables.Q[i, di]
        v = math.inf
        for k in nbrs:
            diff = (0.0 if k == d else tables.q_est[i, k, di]) - q_i
            if kind == "edivbar":
                diff += tables.etx[k, d]
            v = min(v, diff)
        if best is None or v < best_v:
            best, best_v = d, v
    return best
