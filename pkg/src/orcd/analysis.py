"""Stability analysis: rank orderings, the piecewise quadratic Lyapunov
function, empirical drift, stability verdicts and the stability-region LP.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .congestion import solve_fixed_point
from .network import Topology, TopologyError, reachable_to, subset_probability

ORACLE_MAX_NODES = 8
# values within this relative distance count as equal when merging classes
CLASS_RTOL = 1e-9


class OracleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class LyapunovConfig:
    p_min: float

    def __post_init__(self):
        if not 0 < self.p_min < 1:
            raise ValueError(f"p_min must lie in (0, 1), got {self.p_min}")

    @property
    def K(self):
        return 1.0 + 1.0 / self.p_min

    @classmethod
    def from_topology(cls, topology: Topology, cap=0.5):
        """Smallest positive link probability, capped at ``cap``.

        A smaller ``p_min`` only makes ``K`` larger, so the cap keeps the
        weights well defined on networks whose links are all perfect.
        """
        p = topology.links.copy()
        np.fill_diagonal(p, 0.0)
        pos = p[p > 0]
        return cls(min(float(pos.min()) if pos.size else cap, cap))


def f(m, n, config: LyapunovConfig) -> float:
    """Class weight ``1 / (K^m (K^n - 1))`` for a class of ``n`` nodes after ``m`` others."""
    if n <= 0:
        raise ValueError("class size n must be positive")
    if m < 0:
        raise ValueError("m must be non-negative")
    K = config.K
    return 1.0 / (K**m * (K**n - 1.0))


@dataclass(frozen=True)
class RankOrdering:
    classes: tuple  # tuple of frozensets, best (closest to the destination) first
    destination: int
    poisoned: bool = False  # last class holds nodes that cannot reach the destination
    values: tuple = ()  # fixed-point value per class

    def index_of(self, k):
        for n, c in enumerate(self.classes):
            if k in c:
                return n
        raise KeyError(f"node {k} is not in the ordering")

    def before(self, n):
        return sum(len(c) for c in self.classes[:n])


def rank_ordering_from_state(topology: Topology, Q, destination=None) -> RankOrdering:
    """Order non-destination nodes by their fixed-point congestion under backlog ``Q``.

    Nodes with equal value are merged unless one relays through the other;
    relaying depth separates such ties so that every node's relay set lies
    in strictly earlier classes.
    """
    d = topology.destinations[0] if destination is None else destination
    V, sets = solve_fixed_point(topology, Q, "corcd", destination=d, return_sets=True)
    D = topology.node_count
    depth = np.zeros(D, dtype=int)
    for _ in range(D):
        new = depth.copy()
        for i in range(D):
            if i != d and sets[i] and math.isfinite(V[i]):
                new[i] = 1 + max(depth[k] for k in sets[i])
        if np.array_equal(new, depth):
            break
        depth = new
    finite = sorted((i for i in range(D) if i != d and math.isfinite(V[i])), key=lambda i: (V[i], i))
    # clusters of (numerically) equal value, then one class per relay depth
    clusters = []
    for i in finite:
        if clusters:
            j = clusters[-1][-1]
            if abs(V[i] - V[j]) <= CLASS_RTOL * max(1.0, abs(V[j])):
                clusters[-1].append(i)
                continue
        clusters.append([i])
    classes, values = [], []
    for c in clusters:
        for depth_value in sorted({depth[i] for i in c}):
            members = {i for i in c if depth[i] == depth_value}
            classes.append(members)
            values.append(float(min(V[i] for i in members)))
    dead = [i for i in range(D) if i != d and not math.isfinite(V[i])]
    if dead:
        classes.append(set(dead))
        values.append(math.inf)
    return RankOrdering(tuple(frozenset(c) for c in classes), d, bool(dead), tuple(values))


def is_path_connected(R: RankOrdering, topology: Topology) -> bool:
    """Every node of each class reaches the destination through earlier classes only."""
    p = topology.links
    allowed = {R.destination}
    for cls in R.classes:
        # nodes of the allowed region that can reach the destination inside it
        good = {R.destination}
        frontier = [R.destination]
        while frontier:
            j = frontier.pop()
            for k in allowed:
                if k not in good and p[k, j] > 0:
                    good.add(k)
                    frontier.append(k)
        for i in cls:
            if not any(p[i, j] > 0 for j in good if j != i):
                return False
        allowed |= cls
    return True


def _class_sums(Q, R):
    Q = np.asarray(Q, dtype=float)
    covered = set().union(*R.classes) if R.classes else set()
    missing = [k for k in range(len(Q)) if k != R.destination and Q[k] > 0 and k not in covered]
    if missing:
        raise ValueError(f"backlogged nodes {missing} are not covered by the ordering")
    return [sum(Q[k] for k in c) for c in R.classes]


def lyapunov_value(Q, R: RankOrdering, config: LyapunovConfig) -> float:
    total = 0.0
    m = 0
    for c, q in zip(R.classes, _class_sums(Q, R)):
        total += f(m, len(c), config) * q * q
        m += len(c)
    return total


def u_f(k, Q, R: RankOrdering, config: LyapunovConfig) -> float:
    if k == R.destination:
        return 0.0
    n = R.index_of(k)
    c = R.classes[n]
    q = sum(float(np.asarray(Q)[j]) for j in c)
    return f(R.before(n), len(c), config) * q


def lyapunov_star(topology: Topology, Q, config: LyapunovConfig, destination=None) -> float:
    """Lyapunov value under the ordering the state itself induces."""
    return lyapunov_value(Q, rank_ordering_from_state(topology, Q, destination), config)


@dataclass(frozen=True)
class DriftBin:
    lo: float
    hi: float
    center: float
    mean_drift: float
    count: int
    insufficient: bool


@dataclass
class DriftEstimate:
    B: float
    epsilon: float
    bins: list = field(default_factory=list)

    def top_bins(self, quantile_threshold):
        return [b for b in self.bins if b.lo >= quantile_threshold]


def drift_estimate(states, topology: Topology, config: LyapunovConfig | None = None, *, bins=20, min_count=30, destination=None, values=None):
    """One-slot drift of the state-induced Lyapunov function, binned by total backlog.

    ``states`` is a ``(T, D)`` array of per-node backlogs at consecutive
    slots.  Bins hold equal numbers of samples (edges at quantiles of the
    total backlog); the affine bound ``drift ~ B - epsilon * sum(Q)`` is a
    least-squares fit over all transitions.  ``values`` may supply the
    Lyapunov values directly.
    """
    states = np.asarray(states)
    if states.ndim != 2 or len(states) < 2:
        raise ValueError("need a (T, D) trajectory with at least two states")
    if values is None:
        config = config or LyapunovConfig.from_topology(topology)
        cache = {}
        values = np.empty(len(states))
        for t, q in enumerate(states):
            key = q.tobytes()
            if key not in cache:
                cache[key] = lyapunov_star(topology, q, config, destination)
            values[t] = cache[key]
    values = np.asarray(values, dtype=float)
    drift = np.diff(values)
    total = states[:-1].sum(axis=1).astype(float)
    edges = np.unique(np.quantile(total, np.linspace(0, 1, bins + 1)))
    idx = np.clip(np.searchsorted(edges, total, side="right") - 1, 0, max(len(edges) - 2, 0))
    out = []
    for b in range(max(len(edges) - 1, 1)):
        sel = idx == b
        n = int(sel.sum())
        lo = float(edges[b]) if len(edges) > 1 else float(total.min())
        hi = float(edges[b + 1]) if len(edges) > 1 else float(total.max())
        mean = float(drift[sel].mean()) if n else math.nan
        center = float(total[sel].mean()) if n else (lo + hi) / 2
        out.append(DriftBin(lo, hi, center, mean, n, n < min_count))
    if np.ptp(total) > 0:
        slope, intercept = np.polyfit(total, drift, 1)
    else:
        slope, intercept = 0.0, float(drift.mean())
    return DriftEstimate(float(intercept), float(-slope), out)


def stability_region_max_rate(topology: Topology, direction, destination=None) -> float:
    """Largest ``theta`` such that ``theta * direction`` is supportable by a
    stationary randomized relay policy.

    For each node ``i`` and reception set ``S`` the policy splits the
    probability mass ``P(S)`` between keeping the packet and handing it to
    a member of ``S``; the LP maximizes ``theta`` subject to net outflow at
    every non-destination node covering ``theta`` times its arrival rate.
    """
    D = topology.node_count
    if D > ORACLE_MAX_NODES:
        raise OracleSizeError(f"the stability-region oracle enumerates subsets and is limited to {ORACLE_MAX_NODES} nodes")
    d = topology.destinations[0] if destination is None else destination
    lam = np.asarray(direction, dtype=float)
    if lam.shape != (D,):
        raise ValueError(f"direction must have {D} entries")
    if np.any(lam < 0):
        raise ValueError("direction must be non-negative")
    lam = lam.copy()
    lam[d] = 0.0
    if not lam.any():
        return math.inf
    reach = reachable_to(topology, d)
    cut = [i for i in np.flatnonzero(lam) if i not in reach]
    if cut:
        raise TopologyError(f"nodes {cut} carry traffic but cannot reach destination {d}")

    # variable 0 is theta; then y[i, S, j] for j in S (keeping is the slack)
    cols = []
    groups = []
    for i in range(D):
        if i == d:
            continue
        nbrs = topology.neighbors(i)
        for r in range(1, len(nbrs) + 1):
            for S in itertools.combinations(nbrs, r):
                pS = subset_probability(topology, i, S)
                if pS <= 0:
                    continue
                start = len(cols)
                cols.extend((i, j) for j in S)
                groups.append((start, len(cols), pS))
    n = 1 + len(cols)
    c = np.zeros(n)
    c[0] = -1.0
    A, b = [], []
    # theta * lam_k - (out_k - in_k) <= 0
    for k in range(D):
        if k == d:
            continue
        row = np.zeros(n)
        row[0] = lam[k]
        for v, (i, j) in enumerate(cols):
            if i == k:
                row[1 + v] -= 1.0
            if j == k:
                row[1 + v] += 1.0
        A.append(row)
        b.append(0.0)
    for start, stop, pS in groups:
        row = np.zeros(n)
        row[1 + start : 1 + stop] = 1.0
        A.append(row)
        b.append(pS)
    res = linprog(c, A_ub=np.array(A), b_ub=np.array(b), bounds=[(0, None)] * n, method="highs")
    if res.status != 0:
        raise RuntimeError(f"stability-region LP failed: {res.message}")
    return float(res.x[0])


@dataclass(frozen=True)
class StabilityVerdict:
    bounded: bool
    slope: float
    mean_third: float
    mean_fourth: float


MIN_VERDICT_LENGTH = 100_000
SLOPE_LIMIT = 1e-4
QUARTER_RTOL = 0.1


def stability_verdict(series, min_length=MIN_VERDICT_LENGTH) -> StabilityVerdict:
    """Bounded when the last two quarters agree within 10% and the
    second half has least-squares slope at most 1e-4 packets per slot.

    ``series`` is the total backlog after warm-up, one sample per slot.
    """
    x = np.asarray(series, dtype=float)
    if len(x) < min_length:
        raise ValueError(f"series of length {len(x)} is shorter than the minimum {min_length}")
    n = len(x)
    q3 = float(x[n // 2 : 3 * n // 4].mean())
    q4 = float(x[3 * n // 4 :].mean())
    half = x[n // 2 :]
    t = np.arange(len(half), dtype=float)
    slope = float(np.polyfit(t, half, 1)[0])
    bounded = abs(q4 - q3) <= QUARTER_RTOL * q3 and slope <= SLOPE_LIMIT
    return StabilityVerdict(bool(bounded), slope, q3, q4)
