import numpy as np
import pytest

from parsepool.graphs import Graph, build_graph
from parsepool.parsing import EdgeScores


def random_graph(rng, n_min=2, n_max=40, edge_prob=0.18, feature_dim=3,
                 ensure_connected=False):
    """Erdos-Renyi style test graph with standard-normal features."""
    n = int(rng.integers(n_min, n_max + 1))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    edges = [p for p in pairs if rng.random() < edge_prob]
    if ensure_connected:
        order = rng.permutation(n)
        present = {tuple(sorted(e)) for e in edges}
        for a, b in zip(order[:-1], order[1:]):
            key = (min(int(a), int(b)), max(int(a), int(b)))
            if key not in present:
                edges.append(key)
                present.add(key)
    return build_graph(n, edges, features=rng.standard_normal((n, feature_dim)))


def distinct_scores(graph, rng):
    """Edge scores in (0, 1) that are pairwise distinct (permutation plus a
    jitter smaller than half the grid spacing)."""
    ui, uj, _ = graph.adj.undirected_pairs()
    m = ui.size
    base = rng.permutation(m).astype(np.float64)
    jitter = rng.uniform(-0.2, 0.2, size=m)
    vals = (base + 0.5 + jitter) / (m + 1.0)
    return EdgeScores.from_pair_values(graph.adj, ui, uj, vals)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def p4_graph(feature_dim=1):
    return build_graph(4, [(0, 1), (1, 2), (2, 3)],
                       features=np.zeros((4, feature_dim)))


def p4_scores(graph=None):
    graph = p4_graph() if graph is None else graph
    ui, uj, _ = graph.adj.undirected_pairs()
    lookup = {(0, 1): 0.9, (1, 2): 0.5, (2, 3): 0.8}
    vals = [lookup[(int(i), int(j))] for i, j in zip(ui, uj)]
    return EdgeScores.from_pair_values(graph.adj, ui, uj, vals)
