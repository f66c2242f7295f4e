"""Independent reference computations used only by the tests.

These deliberately avoid the package's own helpers: probabilities come
from explicit enumeration of reception subsets, fixed points from a
plain value iteration over every subset of neighbors.
"""
import itertools
import math

import numpy as np


def enumerate_receptions(p_row, nbrs):
    """Yield (subset, probability) over all 2^n reception outcomes."""
    for bits in itertools.product((0, 1), repeat=len(nbrs)):
        prob = 1.0
        S = []
        for k, b in zip(nbrs, bits):
            if b:
                prob *= p_row[k]
                S.append(k)
            else:
                prob *= 1.0 - p_row[k]
        yield frozenset(S), prob


def brute_success(p_row, H):
    return sum(prob for S, prob in enumerate_receptions(p_row, list(H)) if S)


def brute_relay(p_row, order):
    """P(k is the best decoder | someone in the ordered list decodes)."""
    total = {k: 0.0 for k in order}
    P = 0.0
    for S, prob in enumerate_receptions(p_row, list(order)):
        if not S:
            continue
        best = next(k for k in order if k in S)
        total[best] += prob
        P += prob
    return P, {k: v / P for k, v in total.items()}


def brute_value(p_row, cost, members):
    """cost/P + E[V of best decoder | success] for members in priority order."""
    order = [k for k, _ in members]
    vals = dict(members)
    P, dist = brute_relay(p_row, order)
    return cost / P + sum(dist[k] * vals[k] for k in order)


def brute_congestion(p_row, nbrs, est, cost):
    """Minimum over every non-empty subset of finite-valued neighbors."""
    cands = [k for k in nbrs if est[k] < math.inf and p_row[k] > 0]
    best = math.inf
    for r in range(1, len(cands) + 1):
        for sub in itertools.combinations(cands, r):
            members = sorted(((k, est[k]) for k in sub), key=lambda kv: (kv[1], kv[0]))
            best = min(best, brute_value(p_row, cost, members))
    return best


def value_iteration(links, Q, d, variant="corcd", sweeps=200):
    """Gauss-Seidel value iteration minimizing over every neighbor subset.

    Prefix-optimal sets are a subset of all subsets, and for this recursion
    the optimum is attained by a prefix of the ordering, so the two must
    agree at the fixed point.
    """
    D = len(Q)
    cost = np.asarray(Q, float) + (1.0 if variant == "dorcd" else 0.0)
    V = np.full(D, math.inf)
    V[d] = 0.0
    nbrs = [[j for j in range(D) if j != i and links[i, j] > 0] for i in range(D)]
    for _ in range(sweeps):
        old = V.copy()
        for i in range(D):
            if i != d:
                V[i] = brute_congestion(links[i], nbrs[i], V, cost[i])
        if np.array_equal(np.isfinite(V), np.isfinite(old)) and np.nanmax(np.abs(np.where(np.isfinite(V), V - old, 0))) < 1e-13:
            break
    return V


def random_connected(rng, n=5, density=0.6, p_low=0.1, p_high=1.0):
    """Symmetric random network, destination n-1, every node reaches it."""
    while True:
        p = np.zeros((n, n))
        for i, j in itertools.combinations(range(n), 2):
            if rng.random() < density:
                p[i, j] = p[j, i] = rng.uniform(p_low, p_high)
        np.fill_diagonal(p, 1.0)
        # reachability by matrix powers
        reach = (p > 0).astype(int)
        for _ in range(n):
            reach = ((reach @ reach) > 0).astype(int)
        if reach[:, n - 1].all():
            return p
