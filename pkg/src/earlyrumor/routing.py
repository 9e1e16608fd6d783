"""Similarity-graph grouping of experts and within-group subset sampling."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError
from .lm import expert_forward


@dataclass
class SimilarityGraph:
    matrix: np.ndarray  # pruned, symmetric, unit diagonal
    epsilon: float
    raw: np.ndarray = field(default=None, repr=False)

    @property
    def size(self):
        return self.matrix.shape[0]

    def to_json(self, grouping=None):
        doc = {"epsilon": self.epsilon, "matrix": self.matrix.round(12).tolist()}
        if grouping is not None:
            doc["components"] = [list(g) for g in grouping.groups]
        return json.dumps(doc, indent=2)


@dataclass
class ExpertGrouping:
    groups: list  # list of tuples of expert indices, ordered by smallest member

    @property
    def n_experts(self):
        return sum(len(g) for g in self.groups)


def build_similarity_graph(embeddings, epsilon=0.5):
    """Pairwise cosine matrix with entries below ``epsilon`` set to zero."""
    E = np.asarray(embeddings, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 2:
        raise ValueError("need at least two expert embeddings")
    norms = np.linalg.norm(E, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("zero-norm expert embedding")
    U = E / norms[:, None]
    A = np.clip(U @ U.T, -1.0, 1.0)
    A = 0.5 * (A + A.T)
    np.fill_diagonal(A, 1.0)
    pruned = np.where(A < epsilon, 0.0, A)
    np.fill_diagonal(pruned, 1.0)
    return SimilarityGraph(pruned, float(epsilon), raw=A)


def connected_components(graph):
    A = graph.matrix
    L = A.shape[0]
    seen = np.zeros(L, dtype=bool)
    groups = []
    for start in range(L):
        if seen[start]:
            continue
        comp = []
        stack = [start]
        seen[start] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in np.nonzero(A[u] > 0)[0]:
                if v != u and not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        groups.append(tuple(sorted(comp)))
    return ExpertGrouping(groups)


def count_combinations(grouping):
    return sum(2 ** len(g) - 1 for g in grouping.groups)


def enumerate_subsets(grouping):
    """Every non-empty subset lying inside one group, in a fixed order."""
    out = []
    for g in grouping.groups:
        g = list(g)
        for mask in range(1, 2 ** len(g)):
            out.append(tuple(g[i] for i in range(len(g)) if mask >> i & 1))
    return out


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_routing_plan(grouping, K, rng_seed=None):
    """K expert subsets drawn uniformly from the valid within-group subsets.

    Draws are without replacement until every subset has been used once,
    then with replacement.
    """
    if K <= 0:
        raise ValueError("K must be positive")
    rng = _rng(rng_seed)
    subsets = enumerate_subsets(grouping)
    n = len(subsets)
    first = min(K, n)
    idx = list(rng.choice(n, size=first, replace=False))
    if K > n:
        idx.extend(rng.integers(0, n, size=K - n).tolist())
    return [subsets[i] for i in idx]


def combine_experts(H, adapters):
    """Element-wise mean of the adapted sequences of ``adapters`` applied to ``H``."""
    adapters = list(adapters)
    if not adapters:
        raise ValueError("cannot combine an empty expert subset")
    out = expert_forward(H, adapters[0])
    for a in adapters[1:]:
        out = out + expert_forward(H, a)
    return out * (1.0 / len(adapters))


def route(pooled_embeddings, epsilon, K, rng_seed=None):
    """Graph -> components -> plan, for one post's pooled expert embeddings."""
    graph = build_similarity_graph(pooled_embeddings, epsilon)
    grouping = connected_components(graph)
    return sample_routing_plan(grouping, K, rng_seed), grouping
