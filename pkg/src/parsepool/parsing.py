"""Bottom-up graph parsing: decode a discrete node-to-cluster assignment from
edge scores.

The decode runs in three stages.  Stage 1 keeps, for every node, only its
highest-scoring incident edge (its *dominant* edge).  Stage 2 repeatedly seeds
a new cluster at the highest-scoring remaining dominant edge and grows it by
neighbor lookup until no further dominant edge touches it.  Stage 3 gives each
node with no incident edge its own singleton cluster.  The resulting partition
equals the connected components of the dominant-edge graph, and clusters are
numbered in descending order of their best internal score, followed by
singletons in ascending node order.

Ties (equal scores within a row, or equal seed scores) are broken toward the
smallest (row, column) pair so that runs are reproducible; distinct scores
make the partition independent of node numbering.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import Assignment, SparseAdjacency


@dataclass(frozen=True)
class EdgeScores:
    """Per-edge scores in (0, 1) sharing an adjacency's sparsity pattern.

    Symmetry is checked at construction rather than assumed: both orientations
    of an edge must carry the same value.
    """

    matrix: SparseAdjacency

    def __post_init__(self):
        m = self.matrix
        if m.nnz:
            if m.vals.min() <= 0.0 or m.vals.max() >= 1.0:
                raise ValueError("edge scores must lie strictly inside (0, 1)")
            if not m.is_symmetric():
                raise ValueError("edge score matrix must be symmetric")

    @property
    def n(self) -> int:
        return self.matrix.n

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @classmethod
    def from_pair_values(cls, adj: SparseAdjacency, ui, uj, values) -> "EdgeScores":
        """Build a symmetric score matrix from one value per undirected edge.

        (ui, uj) must enumerate adj's undirected edges; each value is stored in
        both orientations, so symmetry is exact in floating point.
        """
        ui = np.asarray(ui, dtype=np.int64)
        uj = np.asarray(uj, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if not (ui.size == uj.size == values.size):
            raise ValueError("pair index arrays and values must have equal length")
        if 2 * ui.size != adj.nnz:
            raise ValueError("pair list does not cover the adjacency pattern")
        rows = np.concatenate([ui, uj])
        cols = np.concatenate([uj, ui])
        vals = np.concatenate([values, values])
        mat = SparseAdjacency.from_coo(adj.n, rows, cols, vals)
        if not np.array_equal(mat.cols, adj.cols) or not np.array_equal(mat.indptr, adj.indptr):
            raise ValueError("pair list does not match the adjacency pattern")
        return cls(matrix=mat)


@dataclass(frozen=True)
class DominantEdges:
    """Row-wise argmax filtering of a score matrix.

    At most one entry per row survives; every node with at least one incident
    edge keeps exactly one.  Entries are stored as parallel (src, dst, val)
    arrays sorted by src.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    val: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.src.size)

    def entry_set(self):
        return {(int(i), int(j)) for i, j in zip(self.src, self.dst)}

    def undirected_support(self) -> SparseAdjacency:
        """Symmetric 0/1 pattern spanned by the kept entries."""
        if not self.nnz:
            return SparseAdjacency.empty(self.n)
        rows = np.concatenate([self.src, self.dst])
        cols = np.concatenate([self.dst, self.src])
        mat = SparseAdjacency.from_coo(
            self.n, rows, cols, np.ones(rows.size), sum_duplicates=True
        )
        return SparseAdjacency(mat.n, mat.indptr, mat.cols, np.ones(mat.nnz))


@dataclass(frozen=True)
class ParseStats:
    """Iteration accounting for one parse.

    ``inner_iterations[p]`` counts the expansion rounds that grew cluster p's
    covered edge set; singleton clusters never enter the expansion loop and
    record 0.  The total is bounded by the node count, and each per-cluster
    count is bounded by the diameter of that cluster's induced subgraph.
    """

    outer_iterations: int
    total_inner_iterations: int
    inner_iterations: tuple

    @classmethod
    def empty(cls):
        return cls(0, 0, ())


def dom(scores: EdgeScores) -> DominantEdges:
    """Keep each row's maximum entry (smallest column wins ties)."""
    m = scores.matrix
    counts = m.row_counts()
    nonempty = np.nonzero(counts)[0]
    if nonempty.size == 0:
        e = np.empty(0, dtype=np.int64)
        return DominantEdges(n=m.n, src=e, dst=e.copy(), val=np.empty(0))
    starts = m.indptr[nonempty]
    row_max = np.maximum.reduceat(m.vals, starts)
    entry_row = np.repeat(np.arange(nonempty.size), counts[nonempty])
    positions = np.arange(m.nnz, dtype=np.int64)
    at_max = np.where(m.vals == row_max[entry_row], positions, m.nnz)
    first = np.minimum.reduceat(at_max, starts)
    return DominantEdges(n=m.n, src=nonempty, dst=m.cols[first], val=m.vals[first])


def expand(idx, chat: DominantEdges):
    """One neighbor-lookup step: induce the node set touched by the seed edges,
    then collect every kept entry incident to it.

    Returns (node set, incident entry set).  This is the literal set-based
    operator; :func:`parse` uses an equivalent incremental form.
    """
    entries = chat.entry_set()
    if not set(idx) <= entries:
        raise ValueError("seed edges must be kept entries of the dominant-edge matrix")
    touched = set()
    for i, j in idx:
        touched.add(i)
        touched.add(j)
    incident = {(i, j) for (i, j) in entries if i in touched or j in touched}
    return touched, incident


def gen(mapping, n: int, p: int) -> Assignment:
    """Materialize an assignment from explicit (node, cluster) pairs.

    Every node in 0..n-1 must appear exactly once and cluster indices must lie
    below p, with each cluster used.
    """
    cluster_of = np.full(n, -1, dtype=np.int64)
    for node, cluster in mapping:
        node, cluster = int(node), int(cluster)
        if not 0 <= node < n:
            raise ValueError(f"node {node} out of range 0..{n - 1}")
        if not 0 <= cluster < p:
            raise ValueError(f"cluster {cluster} out of range 0..{p - 1}")
        if cluster_of[node] != -1:
            raise ValueError(f"node {node} is mapped twice")
        cluster_of[node] = cluster
    missing = np.nonzero(cluster_of == -1)[0]
    if missing.size:
        raise ValueError(f"node {int(missing[0])} has no cluster")
    return Assignment(cluster_of=cluster_of, n_clusters=p).validate()


def parse(scores: EdgeScores):
    """Decode an assignment from edge scores; returns (assignment, stats).

    The node-to-cluster map covers every node with exactly one cluster each
    (nnz equals the node count), never materializes anything dense, and
    performs a number of expansion rounds bounded by each cluster's subgraph
    diameter.
    """
    n = scores.n
    chat = dom(scores)
    labels = np.full(n, -1, dtype=np.int64)
    inner = []

    if chat.nnz:
        k = chat.nnz
        src, dst, val = chat.src, chat.dst, chat.val
        # Reverse adjacency over kept entries: entry ids grouped by their dst.
        in_order = np.argsort(dst, kind="stable")
        in_indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst, minlength=n), out=in_indptr[1:])
        out_entry = np.full(n, -1, dtype=np.int64)
        out_entry[src] = np.arange(k)
        covered = np.zeros(k, dtype=bool)
        # Seeds in descending score order, ties toward the smallest (row, col).
        seed_order = np.lexsort((dst, src, -val))

        p = 0
        for seed in seed_order:
            if covered[seed]:
                continue
            covered[seed] = True
            i, j = int(src[seed]), int(dst[seed])
            labels[i] = p
            labels[j] = p
            frontier = [i, j]
            rounds = 0
            while frontier:
                next_frontier = []
                grew = False
                for u in frontier:
                    e = out_entry[u]
                    if e >= 0 and not covered[e]:
                        covered[e] = True
                        grew = True
                        v = int(dst[e])
                        if labels[v] == -1:
                            labels[v] = p
                            next_frontier.append(v)
                    for t in range(in_indptr[u], in_indptr[u + 1]):
                        e = in_order[t]
                        if not covered[e]:
                            covered[e] = True
                            grew = True
                            v = int(src[e])
                            if labels[v] == -1:
                                labels[v] = p
                                next_frontier.append(v)
                if grew:
                    rounds += 1
                frontier = next_frontier
            inner.append(rounds)
            p += 1
    else:
        p = 0

    # Singleton clusters for isolated nodes, appended in ascending node order.
    isolated = np.nonzero(labels == -1)[0]
    if isolated.size:
        labels[isolated] = p + np.arange(isolated.size)
        inner.extend([0] * isolated.size)
        p += int(isolated.size)

    assignment = Assignment(cluster_of=labels, n_clusters=p)
    stats = ParseStats(
        outer_iterations=p - isolated.size if chat.nnz else 0,
        total_inner_iterations=int(sum(inner)),
        inner_iterations=tuple(inner),
    )
    return assignment, stats


def drop_edges(scores: EdgeScores, ratio: float, rng: np.random.Generator) -> EdgeScores:
    """Remove a uniform sample of floor(ratio * edge count) undirected edges
    (both orientations) from the score matrix."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError("drop ratio must lie in [0, 1)")
    m = scores.matrix
    ui, uj, w = m.undirected_pairs()
    total = ui.size
    n_drop = int(ratio * total)
    if n_drop == 0:
        return scores
    keep = np.ones(total, dtype=bool)
    keep[rng.choice(total, size=n_drop, replace=False)] = False
    rows = np.concatenate([ui[keep], uj[keep]])
    cols = np.concatenate([uj[keep], ui[keep]])
    vals = np.concatenate([w[keep], w[keep]])
    return EdgeScores(matrix=SparseAdjacency.from_coo(m.n, rows, cols, vals))


def parse_with_dropedge(scores: EdgeScores, ratio: float, rng: np.random.Generator):
    """Parse after random edge dropout; nodes isolated by the drop fall back to
    singleton clusters.  Deterministic for a given generator state."""
    return parse(drop_edges(scores, ratio, rng))


def uniform_scores(adj: SparseAdjacency, value: float = 0.5) -> EdgeScores:
    ui, uj, _ = adj.undirected_pairs()
    return EdgeScores.from_pair_values(adj, ui, uj, np.full(ui.size, value))


def random_scores(adj: SparseAdjacency, rng: np.random.Generator) -> EdgeScores:
    ui, uj, _ = adj.undirected_pairs()
    vals = rng.uniform(1e-6, 1.0 - 1e-6, size=ui.size)
    return EdgeScores.from_pair_values(adj, ui, uj, vals)
