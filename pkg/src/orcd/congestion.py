"""Routing metrics: success probabilities, relay distributions, congestion
measures, the centralized fixed point, ETX and partial diversity.

All congestion values are in slots (expected draining time).  ``POISON``
(``+inf``) marks an unreachable or poisoned advertisement and follows
extended-real arithmetic.  Ties in congestion always break toward the
lower node id.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .network import Topology

POISON = math.inf

# exhaustive partial-diversity search only over this many best candidates
PD_EXHAUSTIVE_CANDIDATES = 12
FIXED_POINT_TOL = 1e-10
# relative margin for "strictly smaller"; w * V / w can round below V
TIE_RTOL = 1e-12


class FixedPointError(RuntimeError):
    pass


@dataclass(frozen=True)
class CongestionResult:
    V: float
    H: tuple  # priority set in relay order
    P: float  # probability that some node of H decodes


@dataclass(frozen=True)
class PartialDiversityResult:
    V: float
    B: tuple  # best forwarder set in relay order
    P: float
    exhaustive: bool


def _row(links, i):
    return links.links[i] if isinstance(links, Topology) else np.asarray(links)[i]


def _check_subset(links, i, H):
    if isinstance(links, Topology):
        bad = set(H).difference(links.neighbors(i))
    else:
        row = _row(links, i)
        bad = {k for k in H if k == i or row[k] <= 0}
    if bad:
        raise ValueError(f"{sorted(bad)} are not neighbors of node {i}")


def success_prob(links, i: int, H) -> float:
    """Probability that at least one node of ``H`` decodes a broadcast from ``i``."""
    _check_subset(links, i, H)
    row = _row(links, i)
    miss = 1.0
    for k in H:
        miss *= 1.0 - row[k]
    return 1.0 - miss


def _ordered(entries):
    return sorted(entries, key=lambda kv: (kv[1], kv[0]))


def relay_distribution(links, i: int, H_ordered) -> dict:
    """Conditional probability that each ``k`` is the best node of ``H`` to decode.

    ``H_ordered`` holds ``(node, V)`` pairs; priority follows ascending ``V``
    with ties to the lower id.  The result sums to one.
    """
    if not H_ordered:
        raise ValueError("empty priority set has no relay distribution")
    entries = _ordered(H_ordered)
    _check_subset(links, i, [k for k, _ in entries])
    row = _row(links, i)
    miss = 1.0
    raw = {}
    for k, _ in entries:
        raw[k] = miss * row[k]
        miss *= 1.0 - row[k]
    P = 1.0 - miss
    if P <= 0:
        raise ValueError(f"no node of the priority set can hear node {i}")
    return {k: w / P for k, w in raw.items()}


def local_drain_time(qbar: Mapping, P: Mapping, d) -> float:
    """Own transmission time plus the time to drain every queued packet.

    ``qbar`` and ``P`` map destination -> averaged backlog / success
    probability.  A required zero probability yields ``inf``.
    """
    total = 0.0
    for dd, q in qbar.items():
        if dd == d or q <= 0:
            continue
        p = P[dd]
        if p <= 0:
            return math.inf
        total += q / p
    p = P[d]
    if p <= 0:
        return math.inf
    return (1.0 + qbar.get(d, 0.0)) / p + total


def downstream_drain(relay_dist: Mapping, estimates: Mapping, d=None) -> float:
    missing = set(relay_dist).difference(estimates)
    if missing:
        raise KeyError(f"no congestion estimate for {sorted(missing)}")
    return sum(w * estimates[k] for k, w in relay_dist.items())


def _prefix_values(row, members, cost, const):
    """Yield ``(V, P)`` after each member of ``members`` joins the relay set.

    ``members`` is ``[(k, Vk), ...]`` in priority order.  Both the
    prefix-growing update and the subset search go through here so equal
    sets give bit-identical values.
    """
    miss = 1.0
    acc = 0.0
    for k, vk in members:
        w = miss * row[k]
        acc += w * vk
        miss *= 1.0 - row[k]
        P = 1.0 - miss
        yield const + (cost + acc) / P, P


def _below(a, b):
    if b == math.inf:
        return a < b
    return a < b - TIE_RTOL * abs(b)


def _best_prefix(row, cands, cost, const):
    """Grow the relay set in priority order while the value keeps falling."""
    best_v, best_p, n = math.inf, 0.0, 0
    for idx, (v, P) in enumerate(_prefix_values(row, cands, cost, const)):
        best_v, best_p, n = v, P, idx + 1
        if idx + 1 < len(cands) and not _below(cands[idx + 1][1], v - const):
            break
    return best_v, best_p, n


def _candidates(estimates, row):
    return _ordered(
        (k, v) for k, v in estimates.items() if v < math.inf and row[k] > 0
    )


def update_congestion(
    i: int,
    d,
    estimates: Mapping,
    qbar: Mapping,
    links,
    P_other: Mapping | None = None,
) -> CongestionResult:
    """Self-consistent congestion measure of node ``i`` toward ``d``.

    ``estimates`` maps neighbor -> advertised value (missing means ``inf``),
    ``qbar`` maps destination -> averaged backlog at ``i``, and ``P_other``
    gives the success probabilities currently used for the other
    destinations' share of the local draining time.
    """
    if i == d:
        return CongestionResult(0.0, (), 1.0)
    row = _row(links, i)
    cands = _candidates(estimates, row)
    if not cands:
        return CongestionResult(math.inf, (), 0.0)
    P_other = P_other or {}
    const = 0.0
    for dd, q in qbar.items():
        if dd == d or q <= 0:
            continue
        p = P_other.get(dd, 0.0)
        if p <= 0:
            return CongestionResult(math.inf, (), 0.0)
        const += q / p
    cost = 1.0 + qbar.get(d, 0.0)
    V, P, n = _best_prefix(row, cands, cost, const)
    return CongestionResult(V, tuple(k for k, _ in cands[:n]), P)


def partial_diversity_value(
    i: int,
    d,
    M: int,
    estimates: Mapping,
    links,
    qbar: Mapping,
    P_other: Mapping | None = None,
) -> PartialDiversityResult:
    """Best value over forwarder sets of at most ``M`` neighbors.

    With ``M`` at least the neighborhood size the cap is inactive: the
    result equals :func:`update_congestion` and every neighbor stays
    eligible.  Otherwise subsets of the best ``PD_EXHAUSTIVE_CANDIDATES``
    finite candidates are searched exhaustively; beyond that only prefixes
    are tried and ``exhaustive`` is False.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    row = _row(links, i)
    n_nbrs = int(np.count_nonzero(row > 0)) - (1 if row[i] > 0 else 0)
    if M >= n_nbrs:
        res = update_congestion(i, d, estimates, qbar, links, P_other)
        nbrs = tuple(int(k) for k in np.flatnonzero(row > 0) if k != i)
        return PartialDiversityResult(res.V, nbrs, res.P, True)
    if i == d:
        return PartialDiversityResult(0.0, (), 1.0, True)
    cands = _candidates(estimates, row)
    if not cands:
        return PartialDiversityResult(math.inf, (), 0.0, True)
    P_other = P_other or {}
    const = 0.0
    for dd, q in qbar.items():
        if dd == d or q <= 0:
            continue
        p = P_other.get(dd, 0.0)
        if p <= 0:
            return PartialDiversityResult(math.inf, (), 0.0, True)
        const += q / p
    cost = 1.0 + qbar.get(d, 0.0)
    exhaustive = len(cands) <= PD_EXHAUSTIVE_CANDIDATES
    best = (math.inf, (), 0.0)
    if exhaustive:
        for r in range(1, min(M, len(cands)) + 1):
            for combo in itertools.combinations(cands, r):
                for v, P in _prefix_values(row, combo, cost, const):
                    pass
                if v < best[0]:
                    best = (v, combo, P)
    else:
        for idx, (v, P) in enumerate(_prefix_values(row, cands[:M], cost, const)):
            if v < best[0]:
                best = (v, cands[: idx + 1], P)
    V, combo, P = best
    return PartialDiversityResult(V, tuple(k for k, _ in combo), P, exhaustive)


def poison_filter(i: int, j: int, V_i: float, H) -> float:
    """Value ``i`` advertises to ``j``: unreachable if ``i`` relays through ``j``."""
    return POISON if j in H else V_i


def solve_fixed_point(
    topology: Topology,
    Q,
    cost_variant: str = "corcd",
    destination: int | None = None,
    max_forwarders: int | None = None,
    return_sets: bool = False,
):
    """Centralized congestion fixed point by value iteration from ``inf``.

    ``cost_variant`` picks the per-node numerator: ``"corcd"`` uses the
    backlog ``Q_i``, ``"dorcd"`` uses ``1 + Q_i``.  ``max_forwarders``
    applies the partial-diversity cap.  Jacobi sweeps stop when the
    sup-norm change drops below 1e-10; at most ``10*D`` sweeps.  A node
    changes its relay set only when its value strictly falls.
    """
    if cost_variant not in ("corcd", "dorcd"):
        raise ValueError(f"unknown cost variant {cost_variant!r}")
    D = topology.node_count
    d = topology.destinations[0] if destination is None else destination
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (D,):
        raise ValueError(f"expected {D} backlogs, got shape {Q.shape}")
    cost = Q if cost_variant == "corcd" else 1.0 + Q
    links = topology.links
    nbrs = [topology.neighbors(i) for i in range(D)]
    V = np.full(D, math.inf)
    V[d] = 0.0
    sets = [()] * D
    for _ in range(10 * D):
        new = V.copy()
        for i in range(D):
            if i == d:
                continue
            est = {k: V[k] for k in nbrs[i]}
            if max_forwarders is not None and max_forwarders < len(nbrs[i]):
                res = _pd_with_cost(i, max_forwarders, est, links, cost[i])
            else:
                cands = _candidates(est, links[i])
                if cands:
                    v, _, n = _best_prefix(links[i], cands, cost[i], 0.0)
                    res = (v, tuple(k for k, _ in cands[:n]))
                else:
                    res = (math.inf, ())
            # keep the old relay set on a tie; zero-cost nodes would
            # otherwise be free to pick each other and form a loop
            if _below(res[0], V[i]):
                new[i], sets[i] = res
        finite = np.isfinite(new) & np.isfinite(V)
        if np.array_equal(np.isfinite(new), np.isfinite(V)) and (
            not finite.any() or np.max(np.abs(new[finite] - V[finite])) < FIXED_POINT_TOL
        ):
            V = new
            break
        V = new
    else:
        raise FixedPointError(f"no convergence within {10 * D} sweeps")
    if return_sets:
        return V, sets
    return V


def _pd_with_cost(i, M, est, links, cost):
    cands = _candidates(est, links[i])
    best = (math.inf, ())
    pool = cands[:PD_EXHAUSTIVE_CANDIDATES]
    for r in range(1, min(M, len(pool)) + 1):
        for combo in itertools.combinations(pool, r):
            for v, _ in _prefix_values(links[i], combo, cost, 0.0):
                pass
            if v < best[0]:
                best = (v, tuple(k for k, _ in combo))
    return best


def etx_table(topology: Topology) -> np.ndarray:
    """Unipath expected transmission counts, ``etx[k, d]`` for every pair.

    Bellman-Ford on link weights ``1/p``; unreachable pairs are ``inf``.
    """
    D = topology.node_count
    p = topology.links
    with np.errstate(divide="ignore"):
        w = np.where(p > 0, 1.0 / np.where(p > 0, p, 1.0), math.inf)
    np.fill_diagonal(w, math.inf)
    etx = np.full((D, D), math.inf)
    np.fill_diagonal(etx, 0.0)
    for _ in range(D):
        # etx[k, d] = min_j w[k, j] + etx[j, d]
        cand = np.min(w[:, :, None] + etx[None, :, :], axis=1)
        new = np.minimum(etx, cand)
        if np.array_equal(new, etx):
            break
        etx = new
    return etx
