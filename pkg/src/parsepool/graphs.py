"""Sparse symmetric graphs and the structural operations built on them.

Adjacency is stored CSR-style with column-sorted neighbor lists per row, so
neighbor lookup costs O(degree) and row slices are contiguous.  Graphs are
immutable after construction: arrays are marked read-only and every operation
returns fresh objects, which makes them safe to share across threads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class SparseAdjacency:
    """Symmetric weighted adjacency in CSR form (both edge orientations stored)."""

    __slots__ = ("n", "indptr", "cols", "vals")

    def __init__(self, n: int, indptr, cols, vals):
        self.n = int(n)
        self.indptr = _frozen(np.ascontiguousarray(indptr, dtype=np.int64))
        self.cols = _frozen(np.ascontiguousarray(cols, dtype=np.int64))
        self.vals = _frozen(np.ascontiguousarray(vals, dtype=np.float64))
        if self.indptr.shape != (self.n + 1,):
            raise ValueError("indptr must have length n+1")
        if self.cols.shape != self.vals.shape:
            raise ValueError("cols and vals must be parallel arrays")

    @classmethod
    def from_coo(cls, n, rows, cols, vals, sum_duplicates=False):
        """Assemble from coordinate triplets; optionally merge duplicate slots."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if sum_duplicates and rows.size:
            key = rows * n + cols
            uniq, inverse = np.unique(key, return_inverse=True)
            merged = np.zeros(uniq.size, dtype=np.float64)
            np.add.at(merged, inverse, vals)
            rows, cols, vals = uniq // n, uniq % n, merged
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(n, indptr, cols, vals)

    @classmethod
    def empty(cls, n):
        return cls(n, np.zeros(n + 1, dtype=np.int64), np.empty(0, np.int64), np.empty(0))

    @property
    def nnz(self) -> int:
        return int(self.cols.size)

    def row_counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def degrees(self) -> np.ndarray:
        """Weighted degree per node."""
        out = np.zeros(self.n)
        if self.nnz:
            np.add.at(out, self.row_of_entry(), self.vals)
        return out

    def row_of_entry(self) -> np.ndarray:
        """Row index of every stored entry, in storage order."""
        return np.repeat(np.arange(self.n, dtype=np.int64), self.row_counts())

    def neighbors(self, i):
        """Column/value slices for row i (views, sorted by column)."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.cols[lo:hi], self.vals[lo:hi]

    def to_coo(self):
        return self.row_of_entry(), self.cols, self.vals

    def undirected_pairs(self):
        """One (i, j, w) triple per undirected edge, with i < j and lexsorted."""
        rows = self.row_of_entry()
        keep = rows < self.cols
        return rows[keep], self.cols[keep], self.vals[keep]

    def num_undirected_edges(self) -> int:
        rows = self.row_of_entry()
        return int(np.count_nonzero(rows < self.cols))

    def is_symmetric(self) -> bool:
        rows, cols, vals = self.to_coo()
        order_t = np.lexsort((rows, cols))
        return (
            np.array_equal(rows, cols[order_t])
            and np.array_equal(cols, rows[order_t])
            and np.array_equal(vals, vals[order_t])
        )

    def allclose(self, other, **kw) -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.cols, other.cols)
            and np.allclose(self.vals, other.vals, **kw)
        )

    def __repr__(self):
        return f"SparseAdjacency(n={self.n}, nnz={self.nnz})"


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph with dense node features and an optional label."""

    adj: SparseAdjacency
    features: np.ndarray
    label: object = None

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if feats.shape[0] != self.adj.n:
            raise ValueError(
                f"features have {feats.shape[0]} rows for a {self.adj.n}-node graph"
            )
        object.__setattr__(self, "features", _frozen(feats))

    @property
    def n(self) -> int:
        return self.adj.n

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.adj.num_undirected_edges()


def build_graph(n, edges, weights=None, features=None, label=None) -> Graph:
    """Construct a graph from undirected edge pairs.

    Each pair is stored in both orientations; the default weight is 1.
    Rejects out-of-range indices, self-loops, duplicate pairs, and a feature
    matrix whose row count differs from n.
    """
    n = int(n)
    if n < 0:
        raise ValueError("node count must be non-negative")
    edges = [(int(i), int(j)) for i, j in edges]
    if weights is None:
        weights = np.ones(len(edges))
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(edges),):
            raise ValueError("weights must parallel the edge list")
    seen = set()
    for k, (i, j) in enumerate(edges):
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"edge {k} = ({i}, {j}) references a node outside 0..{n - 1}")
        if i == j:
            raise ValueError(f"edge {k} = ({i}, {j}) is a self-loop")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ValueError(f"edge {k} = ({i}, {j}) duplicates an earlier pair")
        seen.add(key)
    if features is None:
        features = np.zeros((n, 0))
    m = len(edges)
    rows = np.empty(2 * m, dtype=np.int64)
    cols = np.empty(2 * m, dtype=np.int64)
    vals = np.empty(2 * m, dtype=np.float64)
    for k, (i, j) in enumerate(edges):
        rows[2 * k], cols[2 * k], vals[2 * k] = i, j, weights[k]
        rows[2 * k + 1], cols[2 * k + 1], vals[2 * k + 1] = j, i, weights[k]
    adj = SparseAdjacency.from_coo(n, rows, cols, vals)
    return Graph(adj=adj, features=features, label=label)


@dataclass(frozen=True)
class Assignment:
    """Node-to-cluster map: a sparse binary matrix with one unit entry per row.

    Stored as the per-node cluster index, which is the entire nonzero
    structure; nnz always equals the node count.
    """

    cluster_of: np.ndarray
    n_clusters: int

    def __post_init__(self):
        c = np.ascontiguousarray(self.cluster_of, dtype=np.int64)
        object.__setattr__(self, "cluster_of", _frozen(c))

    @property
    def n_nodes(self) -> int:
        return int(self.cluster_of.size)

    @property
    def nnz(self) -> int:
        return self.n_nodes

    def counts(self) -> np.ndarray:
        return np.bincount(self.cluster_of, minlength=self.n_clusters)

    def members(self):
        """Node lists per cluster, in ascending node order."""
        order = np.argsort(self.cluster_of, kind="stable")
        bounds = np.searchsorted(self.cluster_of[order], np.arange(self.n_clusters + 1))
        return [order[bounds[k]:bounds[k + 1]] for k in range(self.n_clusters)]

    def partition(self):
        """The cluster structure as a set of frozensets (label-free view)."""
        return {frozenset(m.tolist()) for m in self.members()}

    def pool_rows(self, x: np.ndarray) -> np.ndarray:
        """Sum rows of x into their clusters (the transpose-multiply action)."""
        out = np.zeros((self.n_clusters,) + x.shape[1:])
        np.add.at(out, self.cluster_of, x)
        return out

    def expand_rows(self, xc: np.ndarray) -> np.ndarray:
        """Give every node its cluster's row (the forward-multiply action)."""
        return xc[self.cluster_of]

    def validate(self):
        c = self.cluster_of
        if c.size and (c.min() < 0 or c.max() >= self.n_clusters):
            raise ValueError("cluster index out of range")
        used = np.bincount(c, minlength=self.n_clusters)
        if np.any(used == 0):
            raise ValueError("every cluster index must be used at least once")
        return self

    @classmethod
    def identity(cls, n):
        return cls(cluster_of=np.arange(n, dtype=np.int64), n_clusters=n)


def coarsen_adjacency(adj: SparseAdjacency, assignment: Assignment) -> SparseAdjacency:
    """Pool an adjacency through an assignment and zero the resulting diagonal.

    Off-diagonal entry (p, q) is the total weight of edges between cluster p
    and cluster q; intra-cluster mass (the raw diagonal) is dropped because
    message passing re-adds self-loops during normalization.
    """
    if assignment.n_nodes != adj.n:
        raise ValueError(
            f"assignment covers {assignment.n_nodes} nodes, adjacency has {adj.n}"
        )
    p = assignment.n_clusters
    rows, cols, vals = adj.to_coo()
    cr = assignment.cluster_of[rows]
    cc = assignment.cluster_of[cols]
    keep = cr != cc
    return SparseAdjacency.from_coo(p, cr[keep], cc[keep], vals[keep], sum_duplicates=True)


def connected_components(adj: SparseAdjacency) -> np.ndarray:
    """Label nodes by connected component; labels are contiguous from 0 in
    order of each component's smallest node."""
    n = adj.n
    labels = np.full(n, -1, dtype=np.int64)
    indptr, cols = adj.indptr, adj.cols
    current = 0
    for start in range(n):
        if labels[start] != -1:
            continue
        labels[start] = current
        stack = [start]
        while stack:
            u = stack.pop()
            for v in cols[indptr[u]:indptr[u + 1]]:
                if labels[v] == -1:
                    labels[v] = current
                    stack.append(int(v))
        current += 1
    return labels


def component_count(adj: SparseAdjacency) -> int:
    if adj.n == 0:
        return 0
    return int(connected_components(adj).max()) + 1


def permute_graph(graph: Graph, perm) -> Graph:
    """Relabel nodes: node i becomes node perm[i].  perm must be a bijection."""
    perm = np.asarray(perm, dtype=np.int64)
    n = graph.n
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError("perm must be a permutation of 0..n-1")
    rows, cols, vals = graph.adj.to_coo()
    adj = SparseAdjacency.from_coo(n, perm[rows], perm[cols], vals)
    feats = np.empty_like(graph.features)
    feats[perm] = graph.features
    label = graph.label
    if isinstance(label, np.ndarray):
        out = np.empty_like(label)
        out[perm] = label
        label = out
    return Graph(adj=adj, features=feats, label=label)


def normalized_adjacency(adj: SparseAdjacency) -> SparseAdjacency:
    """Symmetric message-passing operator: self-loops added, degree-normalized."""
    n = adj.n
    rows, cols, vals = adj.to_coo()
    rows = np.concatenate([rows, np.arange(n, dtype=np.int64)])
    cols = np.concatenate([cols, np.arange(n, dtype=np.int64)])
    vals = np.concatenate([vals, np.ones(n)])
    deg = np.zeros(n)
    np.add.at(deg, rows, vals)
    inv_sqrt = 1.0 / np.sqrt(deg)
    vals = vals * inv_sqrt[rows] * inv_sqrt[cols]
    return SparseAdjacency.from_coo(n, rows, cols, vals)


def graph_to_json_dict(graph: Graph) -> dict:
    ui, uj, w = graph.adj.undirected_pairs()
    out = {
        "n": graph.n,
        "edges": [[int(i), int(j)] for i, j in zip(ui, uj)],
        "features": graph.features.tolist(),
    }
    if not np.all(w == 1.0):
        out["weights"] = w.tolist()
    if graph.label is not None:
        label = graph.label
        out["label"] = label.tolist() if isinstance(label, np.ndarray) else int(label)
    return out


def graph_from_json_dict(doc: dict) -> Graph:
    try:
        n = int(doc["n"])
        edges = doc["edges"]
        features = np.asarray(doc["features"], dtype=np.float64)
    except KeyError as exc:
        raise ValueError(f"graph document is missing required field {exc}") from exc
    if features.ndim == 1:
        features = features.reshape(n, -1) if n else features.reshape(0, 0)
    label = doc.get("label")
    if isinstance(label, list):
        label = np.asarray(label, dtype=np.int64)
    return build_graph(n, edges, weights=doc.get("weights"), features=features, label=label)


def load_graph_json(path) -> Graph:
    with open(path) as fh:
        return graph_from_json_dict(json.load(fh))


def save_graph_json(path, graph: Graph):
    with open(path, "w") as fh:
        json.dump(graph_to_json_dict(graph), fh)
