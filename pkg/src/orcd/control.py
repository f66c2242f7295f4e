"""Distributed congestion computation over the periodic control plane.

Every control epoch each node recomputes its congestion measure from the
freshest estimates it has received, then broadcasts it (one payload per
receiver when split horizon with poison reverse is on).  At the end of a
computation cycle the virtual table is copied into the actual table used
for forwarding.  Queue-backlog estimates for the backpressure policies ride
on the same broadcasts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .congestion import (
    POISON,
    partial_diversity_value,
    poison_filter,
    update_congestion,
)
from .network import Topology

_FIXED_ONE = 1 << 32
_FIXED_MAX = (1 << 64) - 1  # reserved for POISON


def encode_fixed(v: float) -> int:
    """Unsigned 32.32 fixed point; ``POISON`` and overflow map to the reserved maximum."""
    if not v < math.inf:
        return _FIXED_MAX
    return min(int(round(v * _FIXED_ONE)), _FIXED_MAX - 1)


def decode_fixed(raw: int) -> float:
    return POISON if raw == _FIXED_MAX else raw / _FIXED_ONE


@dataclass(frozen=True)
class ControlPacket:
    sender: int
    destination: int
    payload: tuple  # (receiver, 32.32 advertised value) pairs
    epoch: int


@dataclass
class Snapshot:
    """Actual routing table: own measures, neighbor estimates, relay sets."""

    V: np.ndarray  # (D, nd)
    est: np.ndarray  # (D, D, nd): est[i, k, di] as stored at i
    H: list  # H[i][di] tuple
    B: list  # B[i][di] tuple (eligible forwarders)

    def copy(self):
        return Snapshot(self.V.copy(), self.est.copy(), [list(r) for r in self.H], [list(r) for r in self.B])

    def equals(self, other, tol=0.0):
        def close(a, b):
            fa, fb = np.isfinite(a), np.isfinite(b)
            if not np.array_equal(fa, fb) or not np.array_equal(a[~fa], b[~fb]):
                return False
            return np.all(np.abs(a[fa] - b[fb]) <= tol)

        return close(self.V, other.V) and close(self.est, other.est) and self.H == other.H


class ControlPlane:
    def __init__(
        self,
        topology: Topology,
        *,
        max_forwarders: int | None = None,
        loss: float = 0.0,
        poison: bool = False,
        estimate_ttl: int | None = 3,
        rng: np.random.Generator | None = None,
        trace: bool = False,
    ):
        self.topology = topology
        self.links = topology.links
        self.D = D = topology.node_count
        self.dests = topology.destinations
        self.nd = nd = len(self.dests)
        self.M = max_forwarders
        self.loss = float(loss)
        self.poison = poison
        self.estimate_ttl = estimate_ttl
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.nbrs = [topology.neighbors(i) for i in range(D)]
        self.epoch_count = 0
        self.trace = [] if trace else None

        self.qbar = np.zeros((D, nd))
        self.V = np.full((D, nd), POISON)
        self.P = np.zeros((D, nd))
        self.H = [[() for _ in range(nd)] for _ in range(D)]
        self.B = [[() for _ in range(nd)] for _ in range(D)]
        for di, d in enumerate(self.dests):
            self.V[d, di] = 0.0
            self.P[d, di] = 1.0
        self.est = np.full((D, D, nd), POISON)
        self.age = np.zeros((D, D), dtype=np.int64)
        # backlog estimates for backpressure: q_est[i, k, di]
        self.q_est = np.zeros((D, D, nd))
        self.actual = Snapshot(self.V.copy(), self.est.copy(), [list(r) for r in self.H], [list(r) for r in self.B])

    # -- computation -------------------------------------------------------
    def reset_estimates(self):
        self.est.fill(POISON)
        self.age.fill(0)

    def _fresh(self, i):
        est = self.est[i]
        if self.estimate_ttl is None or self.loss <= 0:
            return est
        stale = self.age[i] > self.estimate_ttl
        if not stale.any():
            return est
        est = est.copy()
        est[stale] = POISON
        return est

    def recompute(self):
        """Recompute every node's virtual measures from its current estimates."""
        V = self.V.copy()
        P = self.P.copy()
        for i in range(self.D):
            est_i = self._fresh(i)
            qbar_i = {d: self.qbar[i, di] for di, d in enumerate(self.dests)}
            for di, d in enumerate(self.dests):
                if i == d:
                    continue
                estimates = {k: est_i[k, di] for k in self.nbrs[i]}
                P_other = {dd: self.P[i, dj] for dj, dd in enumerate(self.dests) if dj != di}
                if self.M is not None and self.M < len(self.nbrs[i]):
                    res = partial_diversity_value(i, d, self.M, estimates, self.links, qbar_i, P_other)
                    V[i, di], P[i, di] = res.V, res.P
                    self.H[i][di] = res.B
                    self.B[i][di] = res.B
                else:
                    res = update_congestion(i, d, estimates, qbar_i, self.links, P_other)
                    V[i, di], P[i, di] = res.V, res.P
                    self.H[i][di] = res.H
                    self.B[i][di] = self.nbrs[i]
        self.V = V
        self.P = P

    def broadcast(self, backlog=None):
        """Deliver every node's advertisement to its neighbors, subject to loss."""
        D, nd = self.D, self.nd
        self.age += 1
        for i in range(D):
            nbrs = self.nbrs[i]
            if not nbrs:
                continue
            if self.loss > 0:
                got = self.rng.random(len(nbrs)) >= self.loss
            else:
                got = None
            for di, d in enumerate(self.dests):
                H = self.H[i][di]
                payload = []
                for n, j in enumerate(nbrs):
                    v = poison_filter(i, j, self.V[i, di], H) if self.poison else self.V[i, di]
                    if got is None or got[n]:
                        self.est[j, i, di] = v
                        if backlog is not None:
                            self.q_est[j, i, di] = backlog[i, di]
                    if self.trace is not None:
                        payload.append((j, encode_fixed(v)))
                if self.trace is not None:
                    self.trace.append(ControlPacket(i, d, tuple(payload), self.epoch_count))
            if got is None:
                self.age[list(nbrs), i] = 0
            else:
                rec = [j for n, j in enumerate(nbrs) if got[n]]
                self.age[rec, i] = 0
        self.epoch_count += 1

    def epoch(self, backlog=None):
        self.recompute()
        self.broadcast(backlog)

    def begin_cycle(self, qbar, restart=False):
        self.qbar = np.asarray(qbar, dtype=float).reshape(self.D, self.nd).copy()
        if restart:
            self.reset_estimates()

    def commit(self):
        self.actual = Snapshot(self.V.copy(), self.est.copy(), [list(r) for r in self.H], [list(r) for r in self.B])
        return self.actual

    def run_computation_cycle(self, qbar, rounds: int, restart=False, backlog=None) -> Snapshot:
        """One full cycle of ``rounds`` control epochs followed by the table swap.

        With zero rounds the actual table is left untouched.
        """
        if rounds <= 0:
            return self.actual
        self.begin_cycle(qbar, restart)
        for _ in range(rounds):
            self.epoch(backlog)
        return self.commit()

    def bootstrap(self, rounds=None):
        """Converge the tables on empty queues before traffic starts."""
        rounds = self.D if rounds is None else rounds
        loss, self.loss = self.loss, 0.0
        try:
            self.run_computation_cycle(np.zeros((self.D, self.nd)), rounds, restart=True)
        finally:
            self.loss = loss
