import json

import numpy as np
import pytest

from parsepool.graphs import (
    Assignment,
    Graph,
    SparseAdjacency,
    build_graph,
    coarsen_adjacency,
    component_count,
    connected_components,
    graph_from_json_dict,
    graph_to_json_dict,
    normalized_adjacency,
    permute_graph,
)

from .conftest import p4_graph, random_graph


class TestBuildGraph:
    def test_single_edge_symmetric_storage(self):
        g = build_graph(2, [(0, 1)], features=np.zeros((2, 1)))
        rows, cols, vals = g.adj.to_coo()
        assert list(zip(rows, cols)) == [(0, 1), (1, 0)]
        assert np.all(vals == 1.0)

    def test_empty_edge_list(self):
        g = build_graph(3, [], features=np.zeros((3, 2)))
        assert g.adj.nnz == 0
        assert g.n == 3

    def test_path_has_six_stored_entries(self):
        g = p4_graph()
        assert g.adj.nnz == 6
        assert g.num_edges == 3

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="outside"):
            build_graph(3, [(0, 3)], features=np.zeros((3, 1)))

    def test_rejects_self_loop(self):
        with pytest.raises(ValueError, match="self-loop"):
            build_graph(3, [(1, 1)], features=np.zeros((3, 1)))

    def test_rejects_duplicate_edge(self):
        with pytest.raises(ValueError, match="duplicates"):
            build_graph(3, [(0, 1), (1, 0)], features=np.zeros((3, 1)))

    def test_rejects_feature_row_mismatch(self):
        with pytest.raises(ValueError, match="rows"):
            build_graph(3, [(0, 1)], features=np.zeros((2, 1)))

    def test_weights_stored_both_directions(self):
        g = build_graph(3, [(0, 1), (1, 2)], weights=[2.0, 3.0],
                        features=np.zeros((3, 1)))
        cols, vals = g.adj.neighbors(1)
        assert cols.tolist() == [0, 2]
        assert vals.tolist() == [2.0, 3.0]

    def test_graph_arrays_are_immutable(self):
        g = p4_graph()
        with pytest.raises(ValueError):
            g.features[0, 0] = 1.0
        with pytest.raises(ValueError):
            g.adj.vals[0] = 2.0


class TestCoarsen:
    def test_path_pairs(self):
        g = p4_graph()
        s = Assignment(cluster_of=np.array([0, 0, 1, 1]), n_clusters=2)
        coarse = coarsen_adjacency(g.adj, s)
        rows, cols, vals = coarse.to_coo()
        assert list(zip(rows, cols)) == [(0, 1), (1, 0)]
        assert vals.tolist() == [1.0, 1.0]

    def test_identity_assignment_is_noop(self):
        g = random_graph(np.random.default_rng(3))
        coarse = coarsen_adjacency(g.adj, Assignment.identity(g.n))
        assert coarse.allclose(g.adj)

    def test_star_collapses_to_zero_matrix(self):
        g = build_graph(4, [(0, 1), (0, 2), (0, 3)], features=np.zeros((4, 1)))
        s = Assignment(cluster_of=np.zeros(4, dtype=np.int64), n_clusters=1)
        coarse = coarsen_adjacency(g.adj, s)
        assert coarse.n == 1 and coarse.nnz == 0
        # The dropped diagonal held the whole quadratic-form mass: 6.
        assert g.adj.vals.sum() == 6.0

    def test_dimension_mismatch_rejected(self):
        g = p4_graph()
        with pytest.raises(ValueError, match="assignment covers"):
            coarsen_adjacency(g.adj, Assignment.identity(3))

    def test_symmetric_zero_diagonal_and_mass_conservation(self, rng):
        for _ in range(30):
            g = random_graph(rng)
            if g.adj.nnz == 0:
                continue
            k = int(rng.integers(1, g.n + 1))
            cluster_of = rng.integers(0, k, size=g.n)
            # Make cluster ids contiguous.
            _, cluster_of = np.unique(cluster_of, return_inverse=True)
            s = Assignment(cluster_of=cluster_of, n_clusters=int(cluster_of.max()) + 1)
            coarse = coarsen_adjacency(g.adj, s)
            assert coarse.is_symmetric()
            rows, cols, vals = coarse.to_coo()
            assert np.all(rows != cols)
            # Off-diagonal mass plus intra-cluster mass equals the input mass.
            c = s.cluster_of
            ri, ci, vi = g.adj.to_coo()
            intra = vi[c[ri] == c[ci]].sum()
            assert np.isclose(vals.sum() + intra, g.adj.vals.sum())


class TestComponents:
    def test_path_is_one_component(self):
        assert connected_components(p4_graph().adj).tolist() == [0, 0, 0, 0]

    def test_isolated_nodes(self):
        g = build_graph(3, [], features=np.zeros((3, 1)))
        assert connected_components(g.adj).tolist() == [0, 1, 2]

    def test_two_disjoint_edges(self):
        g = build_graph(4, [(0, 1), (2, 3)], features=np.zeros((4, 1)))
        assert connected_components(g.adj).tolist() == [0, 0, 1, 1]

    def test_matches_scipy(self, rng):
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import connected_components as scipy_components
        for _ in range(25):
            g = random_graph(rng)
            ours = connected_components(g.adj)
            dense = np.zeros((g.n, g.n))
            r, c, v = g.adj.to_coo()
            dense[r, c] = v
            count, theirs = scipy_components(csr_matrix(dense), directed=False)
            assert int(ours.max()) + 1 == count
            # Same partition up to label renaming.
            pairing = {}
            for a, b in zip(ours, theirs):
                assert pairing.setdefault(int(a), int(b)) == int(b)

    def test_component_relabeling_under_permutation(self, rng):
        for _ in range(20):
            g = random_graph(rng)
            perm = rng.permutation(g.n)
            before = connected_components(g.adj)
            after = connected_components(permute_graph(g, perm).adj)
            pairing = {}
            for node in range(g.n):
                key = int(before[node])
                val = int(after[perm[node]])
                assert pairing.setdefault(key, val) == val


class TestPermute:
    def test_identity(self):
        g = p4_graph()
        h = permute_graph(g, np.arange(4))
        assert h.adj.allclose(g.adj)
        assert np.array_equal(h.features, g.features)

    def test_reversal_is_isomorphic_path(self):
        g = p4_graph()
        h = permute_graph(g, np.array([3, 2, 1, 0]))
        assert h.adj.neighbors(3)[0].tolist() == [2]
        assert h.adj.neighbors(0)[0].tolist() == [1]

    def test_round_trip_bitwise_equal(self, rng):
        g = random_graph(rng, feature_dim=4)
        perm = rng.permutation(g.n)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(g.n)
        h = permute_graph(permute_graph(g, perm), inverse)
        assert np.array_equal(h.features, g.features)
        assert np.array_equal(h.adj.indptr, g.adj.indptr)
        assert np.array_equal(h.adj.cols, g.adj.cols)
        assert np.array_equal(h.adj.vals, g.adj.vals)

    def test_rejects_non_bijection(self):
        with pytest.raises(ValueError, match="permutation"):
            permute_graph(p4_graph(), np.array([0, 0, 1, 2]))


class TestNormalizedAdjacency:
    def test_isolated_node_self_loop_only(self):
        g = build_graph(1, [], features=np.zeros((1, 2)))
        p = normalized_adjacency(g.adj)
        rows, cols, vals = p.to_coo()
        assert list(zip(rows, cols)) == [(0, 0)]
        assert vals.tolist() == [1.0]

    def test_row_action_matches_dense_formula(self, rng):
        g = random_graph(rng)
        p = normalized_adjacency(g.adj)
        dense = np.zeros((g.n, g.n))
        r, c, v = g.adj.to_coo()
        dense[r, c] = v
        dense += np.eye(g.n)
        d = dense.sum(axis=1)
        expected = dense / np.sqrt(np.outer(d, d))
        got = np.zeros_like(expected)
        rr, cc, vv = p.to_coo()
        got[rr, cc] = vv
        assert np.allclose(got, expected)


class TestAssignment:
    def test_nnz_equals_rows(self):
        s = Assignment(cluster_of=np.array([0, 1, 0, 2]), n_clusters=3)
        assert s.nnz == 4
        assert s.counts().tolist() == [2, 1, 1]

    def test_pool_and_expand_are_adjoint_actions(self, rng):
        s = Assignment(cluster_of=np.array([0, 0, 1, 1, 2]), n_clusters=3)
        x = rng.standard_normal((5, 2))
        yc = rng.standard_normal((3, 2))
        assert np.isclose((s.pool_rows(x) * yc).sum(), (x * s.expand_rows(yc)).sum())

    def test_validate_rejects_unused_cluster(self):
        with pytest.raises(ValueError, match="used"):
            Assignment(cluster_of=np.array([0, 0, 2]), n_clusters=3).validate()


class TestJsonFormat:
    def test_round_trip(self, rng):
        g = random_graph(rng, feature_dim=2)
        doc = graph_to_json_dict(g)
        h = graph_from_json_dict(json.loads(json.dumps(doc)))
        assert h.adj.allclose(g.adj)
        assert np.array_equal(h.features, g.features)

    def test_weights_and_label_round_trip(self):
        g = build_graph(3, [(0, 1), (1, 2)], weights=[0.5, 2.0],
                        features=np.eye(3), label=1)
        doc = graph_to_json_dict(g)
        assert doc["weights"] == [0.5, 2.0]
        h = graph_from_json_dict(doc)
        assert h.label == 1
        assert np.array_equal(h.adj.vals, g.adj.vals)

    def test_missing_field_rejected(self):
        with pytest.raises(ValueError, match="missing"):
            graph_from_json_dict({"n": 2, "edges": []})
