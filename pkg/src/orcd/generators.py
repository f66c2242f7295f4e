"""Topology generators for the standard scenarios.

All generators return symmetric link matrices unless stated otherwise.
Node 0 is the source in the chain and canonical families; the grid uses
node 0 as its destination.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .network import Topology, validate_topology


def _sym(D, edges):
    p = np.zeros((D, D))
    for i, j, q in edges:
        p[i, j] = p[j, i] = q
    return p


def chain(n, p=1.0, p_last=None):
    """Line ``0 - 1 - ... - n-1`` with the destination at the far end.

    ``p_last`` overrides the link into the destination (a bottleneck).
    """
    if n < 2:
        raise ValueError("a chain needs at least two nodes")
    edges = [(i, i + 1, p) for i in range(n - 1)]
    if p_last is not None:
        edges[-1] = (n - 2, n - 1, p_last)
    return Topology(_sym(n, edges), [n - 1])


def two_relay(p_source=0.5, p_relay=1.0):
    """Source 0 with independent relays 1 and 2, destination 3."""
    edges = [(0, 1, p_source), (0, 2, p_source), (1, 3, p_relay), (2, 3, p_relay)]
    return Topology(_sym(4, edges), [3])


def complete(n, p, destination=None):
    edges = [(i, j, p) for i, j in itertools.combinations(range(n), 2)]
    return Topology(_sym(n, edges), [n - 1 if destination is None else destination])


CANONICAL_DEFAULTS = dict(
    p_source_short=0.8,
    p_source_long=0.8,
    p_short=0.5,
    p_long=0.4,
    p_hole=0.6,
    p_hole_exit=0.0,
)


def canonical(N=1, **params):
    """Source with a short and a long relay branch and a hole behind the short one.

    Layout: 0 source, 1 short relay, 2 long relay, ``3..N+2`` the hole
    chain hanging off the short relay, ``N+3`` the destination.  By
    default the hole is a dead-end pocket; a positive ``p_hole_exit``
    links its far end to the destination.  Defaults give the short relay
    the smaller ETX, so shortest-path routing funnels the source through it.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"hole size must be a positive integer, got {N!r}")
    unknown = set(params) - set(CANONICAL_DEFAULTS)
    if unknown:
        raise ValueError(f"unknown canonical parameters {sorted(unknown)}")
    q = {**CANONICAL_DEFAULTS, **params}
    N = int(N)
    dest = N + 3
    holes = list(range(3, N + 3))
    edges = [
        (0, 1, q["p_source_short"]),
        (0, 2, q["p_source_long"]),
        (1, dest, q["p_short"]),
        (2, dest, q["p_long"]),
        (1, holes[0], q["p_hole"]),
    ]
    if q["p_hole_exit"] > 0:
        edges.append((holes[-1], dest, q["p_hole_exit"]))
    edges += [(a, b, q["p_hole"]) for a, b in zip(holes, holes[1:])]
    return Topology(_sym(N + 4, edges), [dest])


GRID_DEFAULTS = {1.0: 0.9, math.sqrt(2): 0.6, 2.0: 0.25}


def grid(rows=4, cols=4, link_table=None, blocked=(), destination=0):
    """Rows x cols grid; ``link_table`` maps node distance (in grid units) to p.

    ``blocked`` lists ``(i, j, p)`` overrides applied symmetrically.
    """
    table = GRID_DEFAULTS if link_table is None else {float(k): v for k, v in link_table.items()}
    D = rows * cols
    p = np.zeros((D, D))
    for i, j in itertools.combinations(range(D), 2):
        dist = math.hypot(i // cols - j // cols, i % cols - j % cols)
        for k, v in table.items():
            if abs(dist - k) < 1e-9:
                p[i, j] = p[j, i] = v
    for i, j, q in blocked:
        p[i, j] = p[j, i] = q
    return Topology(p, [destination])


def wall_links(rows, cols, wall_x=1.5, wall_end=1.5, p_wall=0.0, link_table=None):
    """Overrides for links whose straight segment crosses a vertical wall.

    The wall sits at column coordinate ``wall_x`` and runs from the top
    edge (row 0) down to row coordinate ``wall_end``.
    """
    base = grid(rows, cols, link_table).links
    out = []
    for i, j in itertools.combinations(range(rows * cols), 2):
        if base[i, j] <= 0:
            continue
        (r1, c1), (r2, c2) = divmod(i, cols), divmod(j, cols)
        if (c1 - wall_x) * (c2 - wall_x) >= 0:
            continue
        y = r1 + (r2 - r1) * (wall_x - c1) / (c2 - c1)
        if y < wall_end:
            out.append((i, j, p_wall))
    return out


def blocked_grid(rows=4, cols=4, link_table=None, wall_x=1.5, wall_end=1.5, p_wall=0.0):
    """Grid with the destination in a corner and a wall between columns 1
    and 2 across the two rows nearest it: the far side must detour below."""
    blocked = wall_links(rows, cols, wall_x, wall_end, p_wall, link_table)
    return grid(rows, cols, link_table, blocked, destination=0)


GENERATORS = {
    "chain": chain,
    "two_relay": two_relay,
    "complete": complete,
    "canonical": canonical,
    "grid": grid,
    "blocked_grid": blocked_grid,
}


def random_topology(rng, n=5, density=0.6, p_low=0.1, p_high=1.0, symmetric=True):
    """Random connected network with the destination at ``n - 1`` (for tests)."""
    while True:
        p = np.zeros((n, n))
        for i, j in itertools.combinations(range(n), 2):
            if rng.random() < density:
                p[i, j] = rng.uniform(p_low, p_high)
                p[j, i] = p[i, j] if symmetric else (rng.uniform(p_low, p_high) if rng.random() < density else 0.0)
        topo = Topology(p, [n - 1])
        if validate_topology(topo).ok:
            return topo
