"""Topology and broadcast-channel model.

Nodes are indexed ``0..D-1``.  ``links[i, j]`` is the probability that a
packet broadcast by ``i`` is decoded by ``j``; receptions at distinct
neighbors are independent.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

# exact subset enumeration is exponential in the fan-out
MAX_FANOUT = 25


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class ForwarderSet:
    transmitter: int
    receivers: frozenset


@dataclass(frozen=True)
class ValidationReport:
    unreachable: dict = field(default_factory=dict)  # destination -> set of nodes
    oversized: dict = field(default_factory=dict)  # node -> fan-out above MAX_FANOUT

    @property
    def ok(self) -> bool:
        return not any(self.unreachable.values()) and not self.oversized

    def messages(self) -> list[str]:
        out = []
        for d, nodes in sorted(self.unreachable.items()):
            if nodes:
                out.append(f"destination {d}: no positive-probability path from {sorted(nodes)}")
        for i, n in sorted(self.oversized.items()):
            out.append(f"node {i}: {n} neighbors exceeds the enumeration cap of {MAX_FANOUT}")
        return out


class Topology:
    """Immutable node set, link matrix and destination set."""

    def __init__(self, links, destinations):
        p = np.array(links, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise TopologyError(f"link matrix must be square, got shape {p.shape}")
        if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise TopologyError("link probabilities must lie in [0, 1]")
        np.fill_diagonal(p, 1.0)
        p.setflags(write=False)
        self.links = p
        self.node_count = p.shape[0]
        dests = tuple(sorted({int(d) for d in destinations}))
        if not dests:
            raise TopologyError("at least one destination is required")
        for d in dests:
            self._check(d)
        self.destinations = dests
        self._neighbors = tuple(
            tuple(int(j) for j in np.flatnonzero(p[i] > 0) if j != i) for i in range(self.node_count)
        )

    def _check(self, i):
        if not (0 <= int(i) < self.node_count) or int(i) != i:
            raise TopologyError(f"invalid node id {i!r} for a {self.node_count}-node network")

    def neighbors(self, i) -> tuple:
        self._check(i)
        return self._neighbors[i]

    def dest_index(self, d) -> int:
        return self.destinations.index(d)

    def __eq__(self, other):
        return (
            isinstance(other, Topology)
            and self.destinations == other.destinations
            and np.array_equal(self.links, other.links)
        )

    def __repr__(self):
        return f"Topology(D={self.node_count}, destinations={self.destinations})"


def neighbors(topology: Topology, i: int) -> set:
    return set(topology.neighbors(i))


def subset_probability(topology: Topology, i: int, S) -> float:
    """Probability that exactly the nodes in ``S`` decode a broadcast from ``i``."""
    nbrs = topology.neighbors(i)
    S = set(S)
    extra = S.difference(nbrs)
    if extra:
        raise TopologyError(f"{sorted(extra)} are not neighbors of {i}")
    p = topology.links[i]
    prob = 1.0
    for k in nbrs:
        prob *= p[k] if k in S else 1.0 - p[k]
    return prob


def iter_subsets(items):
    items = tuple(items)
    for r in range(len(items) + 1):
        yield from itertools.combinations(items, r)


def reception_distribution(topology: Topology, i: int):
    """All ``(S, P(S))`` pairs with positive probability for transmitter ``i``."""
    nbrs = topology.neighbors(i)
    if len(nbrs) > MAX_FANOUT:
        raise TopologyError(f"node {i} has {len(nbrs)} neighbors; cap is {MAX_FANOUT}")
    out = []
    for S in iter_subsets(nbrs):
        prob = subset_probability(topology, i, S)
        if prob > 0:
            out.append((frozenset(S), prob))
    return out


def sample_forwarder_set(topology: Topology, i: int, rng: np.random.Generator) -> ForwarderSet:
    nbrs = topology.neighbors(i)
    if not nbrs:
        return ForwarderSet(i, frozenset())
    hits = rng.random(len(nbrs)) < topology.links[i, list(nbrs)]
    return ForwarderSet(i, frozenset(k for k, h in zip(nbrs, hits) if h))


def reachable_to(topology: Topology, d: int) -> set:
    """Nodes with a directed positive-probability path to ``d`` (``d`` included)."""
    seen = {d}
    frontier = [d]
    p = topology.links
    while frontier:
        j = frontier.pop()
        for i in np.flatnonzero(p[:, j] > 0):
            i = int(i)
            if i not in seen:
                seen.add(i)
                frontier.append(i)
    return seen


def validate_topology(topology: Topology) -> ValidationReport:
    nodes = set(range(topology.node_count))
    unreachable = {d: nodes - reachable_to(topology, d) for d in topology.destinations}
    oversized = {
        i: len(topology.neighbors(i))
        for i in range(topology.node_count)
        if len(topology.neighbors(i)) > MAX_FANOUT
    }
    return ValidationReport(unreachable, oversized)
