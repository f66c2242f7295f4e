import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.sparse.csgraph import breadth_first_order

from orcd.network import (
    MAX_FANOUT,
    Topology,
    TopologyError,
    iter_subsets,
    neighbors,
    reception_distribution,
    sample_forwarder_set,
    subset_probability,
    validate_topology,
)


def test_neighbors_examples():
    assert neighbors(Topology([[1, 0.5], [0.5, 1]], [1]), 0) == {1}
    assert neighbors(Topology([[1, 0], [0, 1]], [1]), 0) == set()
    p = np.full((4, 4), 0.3)
    assert neighbors(Topology(p, [3]), 0) == {1, 2, 3}


def test_neighbors_rejects_bad_id():
    t = Topology([[1, 0.5], [0.5, 1]], [1])
    with pytest.raises(TopologyError):
        neighbors(t, 5)


def test_topology_forces_unit_diagonal_and_rejects_bad_matrices():
    t = Topology([[0, 0.5], [0.5, 0]], [1])
    assert t.links[0, 0] == 1 and t.links[1, 1] == 1
    with pytest.raises(TopologyError):
        Topology([[1, 1.5], [0, 1]], [1])
    with pytest.raises(TopologyError):
        Topology(np.ones((2, 3)), [1])


def _star(ps):
    n = len(ps) + 1
    p = np.zeros((n, n))
    p[0, 1:] = ps
    p[1:, 0] = ps
    return Topology(p, [n - 1])


def test_subset_probability_examples():
    t = _star([0.5, 0.5])
    assert subset_probability(t, 0, {1}) == pytest.approx(0.25)
    assert subset_probability(t, 0, set()) == pytest.approx(0.25)
    t = _star([1.0, 0.5])
    assert subset_probability(t, 0, {2}) == 0.0


def test_subset_probability_rejects_non_neighbor():
    t = Topology([[1, 0.5, 0], [0.5, 1, 0.5], [0, 0.5, 1]], [2])
    with pytest.raises(TopologyError):
        subset_probability(t, 0, {2})


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=0, max_size=12))
def test_subset_probabilities_sum_to_one(ps):
    t = _star(ps) if ps else Topology([[1]], [0])
    total = sum(subset_probability(t, 0, S) for S in iter_subsets(t.neighbors(0)))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_subset_probabilities_sum_to_one_at_twenty_neighbors():
    rng = np.random.default_rng(3)
    t = _star(rng.uniform(0, 1, 20))
    total = sum(p for _, p in reception_distribution(t, 0))
    assert abs(total - 1.0) < 1e-12


def test_sampling_degenerate_links():
    rng = np.random.default_rng(0)
    full = _star([1.0, 1.0, 1.0])
    none = Topology(np.eye(3), [2])
    for _ in range(50):
        assert sample_forwarder_set(full, 0, rng).receivers == {1, 2, 3}
        assert sample_forwarder_set(none, 0, rng).receivers == frozenset()


def test_inclusion_frequency_within_binomial_band():
    rng = np.random.default_rng(11)
    t = _star([0.5] * 3)
    n = 100_000
    hits = np.zeros(4)
    for _ in range(n):
        for k in sample_forwarder_set(t, 0, rng).receivers:
            hits[k] += 1
    sigma = np.sqrt(n * 0.25)
    assert np.all(np.abs(hits[1:] - n / 2) < 3 * sigma)


def test_subset_frequencies_goodness_of_fit():
    rng = np.random.default_rng(5)
    t = _star([0.2, 0.5, 0.7, 0.9])
    dist = dict(reception_distribution(t, 0))
    keys = list(dist)
    counts = dict.fromkeys(keys, 0)
    n = 100_000
    for _ in range(n):
        counts[sample_forwarder_set(t, 0, rng).receivers] += 1
    observed = np.array([counts[k] for k in keys])
    expected = np.array([dist[k] * n for k in keys])
    assert stats.chisquare(observed, expected).pvalue > 0.001


def test_sampling_replays_bit_for_bit():
    t = _star([0.3, 0.6, 0.9])
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    s1 = [sample_forwarder_set(t, 0, r1).receivers for _ in range(500)]
    s2 = [sample_forwarder_set(t, 0, r2).receivers for _ in range(500)]
    assert s1 == s2


def test_validate_chain_is_valid():
    p = [[1, 0.5, 0], [0, 1, 0.5], [0, 0, 1]]
    rep = validate_topology(Topology(p, [2]))
    assert rep.ok and rep.unreachable == {2: set()}


def test_validate_isolated_node():
    p = np.zeros((4, 4))
    p[0, 1] = p[1, 0] = p[1, 3] = p[3, 1] = 0.5
    rep = validate_topology(Topology(p, [3]))
    assert rep.unreachable[3] == {2}
    assert not rep.ok and rep.messages()


def _graph_unreachable(p, d):
    # BFS on the reversed graph from d with scipy as an independent search
    rev = (np.asarray(p).T > 0).astype(int)
    np.fill_diagonal(rev, 0)
    order = breadth_first_order(rev, d, directed=True, return_predecessors=False)
    return set(range(len(p))) - set(order.tolist())


def test_validate_directed_reachability_matches_graph_search():
    # 0 -> 1 exists, but 1 only hears from the destination: no way out of {0, 1}
    p = np.zeros((3, 3))
    p[0, 1] = 0.5
    p[2, 1] = 0.5
    rep = validate_topology(Topology(p, [2]))
    assert rep.unreachable[2] == {0, 1} == _graph_unreachable(p, 2)
    rng = np.random.default_rng(2)
    for _ in range(200):
        q = (rng.random((6, 6)) < 0.3) * rng.uniform(0.1, 1, (6, 6))
        rep = validate_topology(Topology(q, [5]))
        np.fill_diagonal(q, 1)
        assert rep.unreachable[5] == _graph_unreachable(q, 5)


def test_validate_flags_oversized_fanout():
    n = MAX_FANOUT + 2
    p = np.zeros((n, n))
    p[0, 1:] = p[1:, 0] = 0.5
    rep = validate_topology(Topology(p, [n - 1]))
    assert rep.oversized == {0: MAX_FANOUT + 1}
    assert not rep.ok


def test_directed_links_are_kept():
    t = Topology([[1, 0.7], [0.2, 1]], [1])
    assert t.links[0, 1] == 0.7 and t.links[1, 0] == 0.2


def test_iter_subsets_counts():
    assert len(list(iter_subsets(range(5)))) == 32
    assert set(itertools.chain.from_iterable(iter_subsets([1, 2]))) == {1, 2}
