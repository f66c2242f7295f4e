"""Slotted simulation of opportunistic routing.

Each slot runs, in order: the control epoch (every ``ts_slots``), the
choice of transmitters, commodity selection, reception sampling, the
acknowledgement stage, the routing decision, the hand-offs and finally
the exogenous arrivals.  Packets created during slot ``s`` can first be
sent in slot ``s + 1``; a packet delivered during slot ``s`` has delay
``s + 1 - creation_slot``.

Two MAC models are available.  ``ideal``: every backlogged node sends
each slot and hand-offs are reliable.  ``contention``: transmitters form
a round-robin independent set of the conflict graph (neighbors or shared
neighbors conflict), acknowledgements and the forwarding order can be
lost, and unacknowledged packets are retried with a doubling backoff.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .congestion import etx_table, solve_fixed_point
from .control import ControlPlane
from .links import LinkEstimator
from .network import Topology
from .policies import BACKPRESSURE_POLICIES, DECIDERS, RoutingTables, select_commodity

_BLOCK = 4096


@dataclass(slots=True)
class Packet:
    id: int
    source: int
    destination: int
    creation_slot: int
    hop_count: int = 0
    ttl: int = 64
    seq: int = 0  # enqueue stamp at the current node (FIFO order)


class _Uniform:
    """Uniform draws from a private stream, fetched in blocks."""

    def __init__(self, rng):
        self.rng = rng
        self.buf = []
        self.k = 0

    def __call__(self):
        if self.k == len(self.buf):
            self.buf = self.rng.random(_BLOCK).tolist()
            self.k = 0
        self.k += 1
        return self.buf[self.k - 1]


class _Receptions:
    """Per-transmitter reception sets drawn in blocks from the true links."""

    def __init__(self, rng, nbrs, probs):
        self.rng = rng
        self.nbrs = nbrs
        self.probs = np.asarray(probs)
        self.rows = []
        self.k = 0

    def __call__(self):
        if self.k == len(self.rows):
            mask = self.rng.random((_BLOCK, len(self.nbrs))) < self.probs
            self.rows = mask.tolist()
            self.k = 0
        row = self.rows[self.k]
        self.k += 1
        return [j for j, hit in zip(self.nbrs, row) if hit]


class _Arrivals:
    def __init__(self, rng, rate, a_max):
        self.rng = rng
        self.rate = rate
        self.a_max = a_max
        self.buf = []
        self.k = 0

    def __call__(self):
        if self.rate <= 0:
            return 0
        if self.k == len(self.buf):
            self.buf = np.minimum(self.rng.poisson(self.rate, _BLOCK), self.a_max).tolist()
            self.k = 0
        self.k += 1
        return self.buf[self.k - 1]


@dataclass
class MetricsLog:
    node_count: int
    delays: list = field(default_factory=list)  # post warm-up deliveries
    created: int = 0
    delivered: int = 0
    drop_buffer: int = 0
    drop_ttl: int = 0
    drop_retry: int = 0
    fo_lost: int = 0  # forwarding orders lost; the transmitter kept the packet
    transmissions: int = 0
    retries: int = 0
    data_us: float = 0.0
    ack_us: float = 0.0
    fo_us: float = 0.0
    backlog_slots: list = field(default_factory=list)
    backlog_rows: list = field(default_factory=list)
    queued: int = 0
    slots: int = 0

    @property
    def dropped(self):
        return self.drop_buffer + self.drop_ttl + self.drop_retry

    @property
    def overhead_us(self):
        """Handshake airtime: acknowledgement window plus forwarding orders."""
        return self.ack_us + self.fo_us

    @property
    def backlog(self) -> np.ndarray:
        if not self.backlog_rows:
            return np.zeros((0, self.node_count), dtype=np.int64)
        return np.array(self.backlog_rows, dtype=np.int64)

    @property
    def total_backlog(self) -> np.ndarray:
        return self.backlog.sum(axis=1)

    def delay_stats(self):
        if not self.delays:
            return math.nan, math.nan, math.nan
        a = np.asarray(self.delays, dtype=float)
        return float(a.mean()), float(np.percentile(a, 50)), float(np.percentile(a, 95))

    @property
    def mean_delay(self):
        return self.delay_stats()[0]


class World:
    """Complete simulation state for one scenario and seed."""

    def __init__(self, cfg: ScenarioConfig, seed: int = 0, topology: Topology | None = None, trace=False):
        self.cfg = cfg
        self.topo = topo = topology if topology is not None else cfg.build_topology()
        D = self.D = topo.node_count
        self.dests = topo.destinations
        self.dix = {d: n for n, d in enumerate(self.dests)}
        self.nd = len(self.dests)
        self.policy = cfg.policy.name
        self.decide = DECIDERS[self.policy]
        self.M = cfg.policy.M if self.policy == "pdorcd" else None
        self.mac = cfg.mac
        self.contention = cfg.mac.mode == "contention"
        self.nbrs = [topo.neighbors(i) for i in range(D)]
        p = topo.links

        ss = np.random.SeedSequence(int(seed))
        streams = [np.random.default_rng(s) for s in ss.spawn(3 * D + 2)]
        self.recv = [_Receptions(streams[D + i], self.nbrs[i], p[i, list(self.nbrs[i])]) for i in range(D)]
        self.mac_u = [_Uniform(streams[2 * D + i]) for i in range(D)]
        control_rng, probe_rng = streams[3 * D], streams[3 * D + 1]
        self.probe_rng = probe_rng

        t = cfg.traffic
        self.arrivals = []  # (node, destination, generator)
        per_node = {}
        for f in t.flows:
            d = self.dests[0] if f.destination is None else f.destination
            per_node.setdefault(f.source, []).append((d, f.rate * t.load))
        for i in sorted(per_node):
            for d, rate in per_node[i]:
                self.arrivals.append((i, d, _Arrivals(streams[i], rate, t.a_max)))
        self.burst = t.burst

        self.queues = [{d: deque() for d in self.dests} for _ in range(D)]
        self.Q = np.zeros((D, self.nd), dtype=np.int64)
        self.qtot = [0] * D
        self.capacity = cfg.buffer_packets
        self.next_id = 0
        self.stamp = 0
        self.retries = [0] * D
        self.backoff_until = [0] * D
        self.rr = 0

        tm = cfg.timing
        self.ts = tm.ts_slots
        self.m = tm.tc_multiple
        self.restart = tm.restart_cycle if tm.restart_cycle is not None else self.m >= D
        self.samples = deque(maxlen=self.m)
        self.needs_metric = self.policy in ("dorcd", "pdorcd")
        self.control = ControlPlane(
            topo,
            max_forwarders=self.M,
            loss=cfg.control.loss,
            poison=cfg.control.poison,
            estimate_ttl=cfg.control.estimate_ttl_epochs,
            rng=control_rng,
            trace=trace,
        )

        self.estimator = None
        if cfg.links.estimation == "estimated":
            self.estimator = LinkEstimator(D, cfg.links.alpha, cfg.links.beta)
            self._probe_window()
            self._set_links(self.estimator.update())
        else:
            self.etx = etx_table(topo)
        if self.needs_metric:
            self.control.bootstrap()

        self.tables = RoutingTables(
            dests=self.dix,
            Q=self.Q,
            q_est=self.control.q_est,
            etx=self.etx,
            neighbors=self.nbrs,
        )
        self._load_snapshot()
        self._corcd_key = None

        if self.contention:
            adj = (p > 0) | (p.T > 0)
            np.fill_diagonal(adj, False)
            two = (adj.astype(int) @ adj.astype(int)) > 0
            conflict = adj | two
            np.fill_diagonal(conflict, False)
            self.conflicts = [set(np.flatnonzero(conflict[i]).tolist()) for i in range(D)]

        self.log = MetricsLog(D)
        self.warmup = cfg.warmup_slots
        self.slot = 0
        self.last_moves = []
        self.last_decisions = []
        self.last_arrivals = [0] * D

    # -- links and tables ----------------------------------------------------
    def _probe_window(self):
        p = self.topo.links
        for _ in range(self.cfg.links.window):
            hits = self.probe_rng.random((self.D, self.D)) < p
            for i in range(self.D):
                self.estimator.record_probe(i, [j for j in self.nbrs[i] if hits[i, j]])

    def _set_links(self, phat):
        phat = np.where(self.topo.links > 0, phat, 0.0)
        np.fill_diagonal(phat, 1.0)
        self.control.links = phat
        est_topo = Topology(phat, self.dests)
        self.etx = etx_table(est_topo)
        if hasattr(self, "tables"):
            self.tables.etx = self.etx

    def _load_snapshot(self):
        snap = self.control.actual
        self.tables.V = snap.V
        self.tables.est = snap.est
        self.tables.B = snap.B

    def _corcd_tables(self):
        key = self.Q.tobytes()
        if key == self._corcd_key:
            return
        V = np.empty((self.D, self.nd))
        for di, d in enumerate(self.dests):
            V[:, di] = solve_fixed_point(self.topo, self.Q[:, di], "corcd", destination=d)
        self.tables.V = V
        self._corcd_key = key

    # -- control plane -------------------------------------------------------
    def _control_epoch(self, s):
        e = s // self.ts
        pos = e % self.m
        cp = self.control
        self.samples.append(self.Q.astype(float))
        if self.needs_metric:
            if pos == 0:
                cp.begin_cycle(np.mean(self.samples, axis=0), restart=self.restart)
            cp.epoch(self.Q)
            if pos == self.m - 1:
                cp.commit()
                self._load_snapshot()
        elif self.policy in BACKPRESSURE_POLICIES:
            cp.broadcast(self.Q)

    # -- queues --------------------------------------------------------------
    def _enqueue(self, k, pkt):
        if self.capacity is not None and self.qtot[k] >= self.capacity:
            self.log.drop_buffer += 1
            return False
        self.stamp += 1
        pkt.seq = self.stamp
        d = pkt.destination
        self.queues[k][d].append(pkt)
        self.Q[k, self.dix[d]] += 1
        self.qtot[k] += 1
        return True

    def _pop(self, i, d):
        pkt = self.queues[i][d].popleft()
        self.Q[i, self.dix[d]] -= 1
        self.qtot[i] -= 1
        return pkt

    def inject(self, node, destination=None, count=1, slot=0):
        """Place packets directly in a queue (test setups)."""
        d = self.dests[0] if destination is None else destination
        for _ in range(count):
            self._create(node, d, slot)

    def _create(self, node, d, creation_slot):
        pkt = Packet(self.next_id, node, d, creation_slot, 0, self.cfg.ttl)
        self.next_id += 1
        self.log.created += 1
        self._enqueue(node, pkt)

    # -- one slot ------------------------------------------------------------
    def _transmitters(self, s):
        busy = [i for i in range(self.D) if self.qtot[i] > 0]
        if not self.contention:
            return busy
        chosen = []
        blocked = set()
        D = self.D
        busy_set = set(busy)
        for n in range(D):
            i = (self.rr + n) % D
            if i in busy_set and i not in blocked and self.backoff_until[i] <= s:
                chosen.append(i)
                blocked |= self.conflicts[i]
                blocked.add(i)
        self.rr = (self.rr + 1) % D
        return sorted(chosen)

    def _ack_slots(self, i):
        n = len(self.nbrs[i])
        return n if self.M is None else min(n, self.M)

    def step(self):
        s = self.slot
        log = self.log
        mac = self.mac
        if s % self.ts == 0:
            self._control_epoch(s)
        if self.policy == "corcd":
            self._corcd_tables()
        tables = self.tables
        moves = []  # (transmitter, commodity, next hop)
        decisions = []  # (transmitter, chosen node, acknowledgements heard)
        p = self.topo.links
        for i in self._transmitters(s):
            d = select_commodity(i, self.policy, tables, self.queues[i])
            if d is None:
                continue
            S = self.recv[i]()
            if self.estimator is not None:
                self.estimator.record_data(i, S)
            log.transmissions += 1
            log.data_us += mac.t_data_us
            log.ack_us += self._ack_slots(i) * (mac.t_ack_us + mac.sifs_us)
            if self.policy == "pdorcd":
                B = tables.B[i][self.dix[d]]
                ackers = [k for k in S if k in B]
            else:
                B = None
                ackers = S
            mode = "contention" if self.contention else "ideal"
            outcome, k, heard = resolve_handshake(
                i, ackers, lambda H: self._decide(i, d, H, B), p, mac, self.mac_u[i], mode
            )
            if heard:
                log.fo_us += mac.t_fo_us
            decisions.append((i, k, heard))
            if outcome == "retry":
                self._no_ack(i, d, s)
                continue
            self.retries[i] = 0
            if outcome == "fo_lost":
                log.fo_lost += 1
                continue
            if k != i:
                moves.append((i, d, k))
        self.last_decisions = decisions
        self._apply(moves, s)
        self._arrive(s)
        self.slot = s + 1
        log.slots = self.slot
        if s % self.cfg.backlog_every == 0:
            log.backlog_slots.append(s)
            log.backlog_rows.append(list(self.qtot))
        return self

    def _decide(self, i, d, S, B):
        if self.policy == "pdorcd":
            # S already holds only eligible forwarders
            return self.decide(i, d, S, self.tables, B).next_hop
        return self.decide(i, d, S, self.tables).next_hop

    def _no_ack(self, i, d, s):
        log = self.log
        self.retries[i] += 1
        log.retries += 1
        if self.retries[i] > self.mac.retry_limit:
            self._pop(i, d)
            log.drop_retry += 1
            self.retries[i] = 0
            return
        cw = self.mac.cw_min * (1 << self.retries[i])
        self.backoff_until[i] = s + 1 + int(self.mac_u[i]() * cw)

    def _apply(self, moves, s):
        log = self.log
        popped = [(self._pop(i, d), i, k) for i, d, k in moves]
        self.last_moves = [(i, k) for _, i, k in popped]
        for pkt, i, k in popped:
            pkt.ttl -= 1
            pkt.hop_count += 1
            if k == pkt.destination:
                log.delivered += 1
                if pkt.creation_slot >= self.warmup:
                    log.delays.append(s + 1 - pkt.creation_slot)
            elif pkt.ttl <= 0:
                log.drop_ttl += 1
            else:
                self._enqueue(k, pkt)

    def _arrive(self, s):
        counts = [0] * self.D
        for i, d, gen in self.arrivals:
            a = gen()
            counts[i] += a
            for _ in range(a):
                self._create(i, d, s + 1)
        b = self.burst
        if b is not None and s >= b.start and (s - b.start) % b.period == 0:
            for i in b.nodes:
                counts[i] += b.size
                for _ in range(b.size):
                    self._create(i, self.dests[0], s + 1)
        self.last_arrivals = counts
        if self.estimator is not None and (s + 1) % self.cfg.links.window == 0:
            self._probe_window()
            self._set_links(self.estimator.update())

    def run(self, slots=None):
        n = self.cfg.horizon if slots is None else slots
        for _ in range(n):
            self.step()
        self.log.queued = sum(self.qtot)
        return self.log

    def in_system(self):
        return sum(self.qtot)


def resolve_handshake(i, S, decide, links, mac, uniform, mode="ideal"):
    """Acknowledgement and forwarding-order exchange for one transmission.

    ``S`` are the nodes that decoded and acknowledge, ``decide`` maps the
    acknowledgements the transmitter heard to its chosen relay, and
    ``uniform`` is a zero-argument source of U(0, 1) draws.  Returns
    ``(outcome, next_hop, heard)`` where outcome is ``"handed_off"``,
    ``"retained"``, ``"retry"`` (nothing heard) or ``"fo_lost"``; turning
    too many retries into a drop is the caller's job.
    """
    if mode == "ideal":
        heard = list(S)
    else:
        heard = [k for k in S if not mac.ack_loss or uniform() < links[k, i]]
        if not heard:
            return "retry", i, heard
    k = decide(heard)
    if k == i:
        return "retained", i, heard
    if mode != "ideal" and mac.fo_loss and not uniform() < links[i, k]:
        return "fo_lost", k, heard
    return "handed_off", k, heard


def run_scenario(cfg: ScenarioConfig, seed: int | None = None, topology: Topology | None = None) -> MetricsLog:
    seed = cfg.seeds[0] if seed is None else seed
    return World(cfg, seed, topology).run()
