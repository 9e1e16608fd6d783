import json
from collections import Counter

import numpy as np
import pytest

from earlyrumor.errors import DegenerateInputError
from earlyrumor.lm import LowRankAdapter, expert_forward
from earlyrumor.routing import (ExpertGrouping, build_similarity_graph, combine_experts, connected_components,
                                count_combinations, enumerate_subsets, route, sample_routing_plan)
from earlyrumor.tensor import Tensor


def _random_config(rng):
    L = int(rng.integers(2, 13))
    n_clusters = int(rng.integers(1, L + 1))
    centres = rng.normal(size=(n_clusters, 5))
    E = centres[rng.integers(0, n_clusters, L)] + rng.normal(0.0, rng.uniform(0.05, 1.5), (L, 5))
    return E, float(rng.uniform(-0.2, 0.99))


def _reachability(adj):
    R = adj.copy()
    np.fill_diagonal(R, True)
    for k in range(len(R)):
        R |= R[:, k:k + 1] & R[k:k + 1, :]
    return R


def _oracle_count(groups, L):
    masks = np.arange(1, 2 ** L)
    valid = np.zeros(len(masks), dtype=bool)
    for g in groups:
        gmask = sum(1 << i for i in g)
        valid |= (masks & ~gmask) == 0
    return int(valid.sum())


def test_worked_examples():
    three = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    g = connected_components(build_similarity_graph(three, 0.5))
    assert g.groups == [(0, 1), (2,)]
    assert count_combinations(g) == 4
    assert count_combinations(ExpertGrouping([(0, 1, 2)])) == 7
    assert count_combinations(ExpertGrouping([(i,) for i in range(5)])) == 5


def test_graph_is_symmetric_pruned_with_unit_diagonal():
    rng = np.random.default_rng(0)
    g = build_similarity_graph(rng.normal(size=(6, 4)), 0.3)
    A = g.matrix
    assert np.array_equal(A, A.T) and np.all(np.diag(A) == 1.0)
    off = A[~np.eye(6, dtype=bool)]
    assert np.all((off == 0.0) | (off >= 0.3))


def test_graph_rejects_degenerate_input():
    with pytest.raises(DegenerateInputError):
        build_similarity_graph(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        build_similarity_graph(np.ones((1, 3)))


def test_epsilon_extremes():
    E = np.random.default_rng(1).normal(size=(5, 3))
    assert len(connected_components(build_similarity_graph(E, -1.0)).groups) == 1
    assert len(connected_components(build_similarity_graph(E, 1.01)).groups) == 5


def test_components_and_counts_match_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        E, eps = _random_config(rng)
        graph = build_similarity_graph(E, eps)
        grouping = connected_components(graph)
        L = len(E)
        R = _reachability(graph.matrix > 0)
        oracle = sorted({tuple(np.nonzero(R[i])[0].tolist()) for i in range(L)})
        assert sorted(grouping.groups) == oracle
        assert grouping.n_experts == L
        assert count_combinations(grouping) == _oracle_count(grouping.groups, L)
        assert len(enumerate_subsets(grouping)) == count_combinations(grouping)


def test_plan_first_draws_cover_every_subset_once():
    grouping = ExpertGrouping([(0, 1, 2), (3, 4), (5,)])
    n = count_combinations(grouping)
    plan = sample_routing_plan(grouping, n + 5, rng_seed=3)
    assert sorted(plan[:n]) == sorted(enumerate_subsets(grouping))
    valid = set(enumerate_subsets(grouping))
    assert all(s in valid for s in plan)


def test_plan_is_reproducible_and_validates_k():
    grouping = ExpertGrouping([(0, 1), (2,)])
    assert sample_routing_plan(grouping, 6, 9) == sample_routing_plan(grouping, 6, 9)
    with pytest.raises(ValueError):
        sample_routing_plan(grouping, 0)


def test_plan_frequencies_are_uniform_over_a_million_draws():
    grouping = ExpertGrouping([(0, 1, 2), (3, 4), (5,)])
    n = count_combinations(grouping)
    draws = 1_000_000
    counts = Counter(sample_routing_plan(grouping, draws, rng_seed=11))
    expected = draws / n
    assert len(counts) == n
    assert max(abs(c - expected) / expected for c in counts.values()) < 0.01


def test_combine_experts():
    rng = np.random.default_rng(4)
    H = Tensor(rng.normal(size=(4, 6)))
    a = LowRankAdapter(6, 2, rng=rng)
    a.up.data = rng.normal(size=(2, 6))
    single = expert_forward(H, a).data
    assert np.array_equal(combine_experts(H, [a]).data, single)
    assert np.allclose(combine_experts(H, [a, a, a]).data, single, atol=1e-12)
    b = LowRankAdapter(6, 2, rng=rng)
    b.up.data = rng.normal(size=(2, 6))
    both = combine_experts(H, [a, b]).data
    assert np.allclose(both, (single + expert_forward(H, b).data) / 2, atol=1e-12)
    with pytest.raises(ValueError):
        combine_experts(H, [])


def test_route_and_json_dump():
    E = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    plan, grouping = route(E, 0.5, 3, rng_seed=0)
    assert len(set(plan)) == 3 and set(plan) <= set(enumerate_subsets(grouping))
    doc = json.loads(build_similarity_graph(E, 0.5).to_json(grouping))
    assert doc["components"] == [[0, 1], [2]]
