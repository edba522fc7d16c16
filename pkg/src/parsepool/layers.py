"""Neural building blocks of one pooling level and one un-pooling level.

A pooling level encodes the graph with a small GCN stack, scores every edge
with a shared MLP on the elementwise product of its endpoint embeddings,
decodes a discrete assignment from those scores, and aggregates node features
into cluster features with a sum-based set encoder.  Cluster features are then
scaled by the per-cluster sum of internal edge scores, which is the only path
through which the loss reaches the scorer: the decode itself never runs in the
backward pass.

One parameter set drives every level of a model, so level-0 inputs must
already be embedded to the shared hidden width (models apply a one-time input
embedding before the first level).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tape
from .graphs import Assignment, Graph, SparseAdjacency, coarsen_adjacency, normalized_adjacency
from .parsing import EdgeScores, ParseStats, parse, parse_with_dropedge
from .tape import Value


@dataclass
class MLPParams:
    """Dense layer stack; ReLU between layers, none after the last."""

    weights: list
    biases: list

    def named(self, prefix: str) -> dict:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{k}"] = w
            out[f"{prefix}.b{k}"] = b
        return out

    @property
    def out_dim(self) -> int:
        return self.weights[-1].data.shape[1]


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_mlp(rng: np.random.Generator, dims) -> MLPParams:
    """dims = [in, hidden..., out].

    Biases start at a small positive constant rather than zero: with zero
    biases a ReLU stack can evaluate exactly at its kink (whole rows die to
    exact zeros), where finite differences and subgradients disagree.
    """
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(Value(glorot(rng, a, b)))
        biases.append(Value(np.full((1, b), 0.01)))
    return MLPParams(weights=weights, biases=biases)


def identity_mlp(dim: int) -> MLPParams:
    return MLPParams(weights=[Value(np.eye(dim))], biases=[Value(np.zeros((1, dim)))])


def mlp_forward(x: Value, mlp: MLPParams, *, dropout: float = 0.0,
                training: bool = False, rng=None) -> Value:
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        x = tape.add_bias(tape.matmul(x, w), b)
        if k < last:
            x = tape.relu(x)
            if training and dropout > 0.0:
                x = tape.dropout(x, dropout, rng)
    return x


@dataclass
class PoolParams:
    """Shared parameters of the pooling level.

    ``gcn`` is the encoder stack used for edge scoring; ``score`` maps an
    edge's endpoint-product embedding to a logit; ``set_inner``/``set_outer``
    form the sum-based cluster feature encoder.  ``separate_gnn``, when
    present, encodes the features fed to the set encoder instead of the
    scoring embeddings (used by the node-level model).
    """

    gcn: MLPParams
    score: MLPParams
    set_inner: MLPParams
    set_outer: MLPParams
    separate_gnn: MLPParams = None

    def named(self, prefix: str = "pool") -> dict:
        out = {}
        out.update(self.gcn.named(f"{prefix}.gcn"))
        out.update(self.score.named(f"{prefix}.score"))
        out.update(self.set_inner.named(f"{prefix}.set_inner"))
        out.update(self.set_outer.named(f"{prefix}.set_outer"))
        if self.separate_gnn is not None:
            out.update(self.separate_gnn.named(f"{prefix}.sep_gnn"))
        return out


def init_pool_params(rng, width: int, *, gcn_layers: int = 2, score_layers: int = 1,
                     set_layers: int = 1, separate_gnn: bool = False) -> PoolParams:
    return PoolParams(
        gcn=init_mlp(rng, [width] * (gcn_layers + 1)),
        score=init_mlp(rng, [width] * score_layers + [1]),
        set_inner=init_mlp(rng, [width] * (set_layers + 1)),
        set_outer=init_mlp(rng, [width] * (set_layers + 1)),
        separate_gnn=init_mlp(rng, [width] * (gcn_layers + 1)) if separate_gnn else None,
    )


def gcn_forward(x: Value, adj: SparseAdjacency, gcn: MLPParams, *, norm=None) -> Value:
    """Message-passing encoder: degree-normalized propagation with self-loops,
    then a linear map and ReLU, repeated per layer.  Weighted adjacencies are
    supported; pass a precomputed normalized operator to skip rebuilding it."""
    if norm is None:
        norm = normalized_adjacency(adj)
    for w, b in zip(gcn.weights, gcn.biases):
        x = tape.relu(tape.add_bias(tape.matmul(tape.spmm_symmetric(norm, x), w), b))
    return x


def edge_scores(h: Value, adj: SparseAdjacency, score_mlp: MLPParams, *,
                dropout: float = 0.0, training: bool = False, rng=None):
    """Score every edge from its endpoints' embedding product.

    Returns (score matrix, per-undirected-edge score Value, (ui, uj) pairs);
    the Value carries the gradient path, the matrix feeds the decode.  The
    elementwise product is commutative, so the matrix is exactly symmetric.
    """
    ui, uj, _ = adj.undirected_pairs()
    prod = tape.elementwise_mul(tape.gather_rows(h, ui), tape.gather_rows(h, uj))
    logits = mlp_forward(prod, score_mlp, dropout=dropout, training=training, rng=rng)
    svals = tape.sigmoid(logits)
    # A confident scorer saturates to exactly 0/1 in float64; nudge into the
    # open interval for the decode (saturated scores are tied either way).
    clipped = np.clip(svals.data.reshape(-1), 1e-12, 1.0 - 1e-12)
    matrix = EdgeScores.from_pair_values(adj, ui, uj, clipped)
    return matrix, svals, (ui, uj)


def cluster_mask(scores: EdgeScores, assignment: Assignment) -> np.ndarray:
    """Per-cluster sum of internal edge scores, each undirected edge counted
    once; clusters with no internal edge get 1 so their features pass through
    unscaled."""
    ui, uj, w = scores.matrix.undirected_pairs()
    c = assignment.cluster_of
    internal = c[ui] == c[uj]
    y = np.bincount(c[ui][internal], weights=w[internal], minlength=assignment.n_clusters)
    has_edge = np.bincount(c[ui][internal], minlength=assignment.n_clusters) > 0
    y[~has_edge] = 1.0
    return y


def cluster_mask_value(svals: Value, ui, uj, assignment: Assignment) -> Value:
    """Differentiable twin of :func:`cluster_mask`, as a (p, 1) column."""
    c = assignment.cluster_of
    internal = np.nonzero(c[ui] == c[uj])[0]
    p = assignment.n_clusters
    summed = tape.scatter_add_rows(tape.gather_rows(svals, internal), c[ui[internal]], p)
    base = np.ones((p, 1))
    base[np.unique(c[ui[internal]])] = 0.0
    return tape.add_const(summed, base)


def deepsets(h: Value, assignment: Assignment, inner: MLPParams, outer: MLPParams, *,
             dropout: float = 0.0, training: bool = False, rng=None) -> Value:
    """Permutation-invariant cluster features: transform rows, sum them into
    their clusters, transform the sums."""
    z = mlp_forward(h, inner, dropout=dropout, training=training, rng=rng)
    pooled = tape.scatter_add_rows(z, assignment.cluster_of, assignment.n_clusters)
    return mlp_forward(pooled, outer, dropout=dropout, training=training, rng=rng)


@dataclass
class PoolStep:
    """Everything one pooling level produces."""

    assignment: Assignment
    scores: EdgeScores
    mask: Value
    features: Value
    coarse_adj: SparseAdjacency
    stats: ParseStats
    hidden: Value


def pool_step(x: Value, adj: SparseAdjacency, params: PoolParams, *,
              training: bool = False, dropedge: float = 0.0, dropout: float = 0.0,
              rng=None, assignment: Assignment = None) -> PoolStep:
    """Run one pooling level on embedded features.

    When ``assignment`` is given the decode is skipped and the level replays
    that structure; this is how gradients are checked with the structure held
    fixed, matching the backward semantics (the decode never differentiates).
    """
    norm = normalized_adjacency(adj)
    h = gcn_forward(x, adj, params.gcn, norm=norm)
    scores, svals, (ui, uj) = edge_scores(
        h, adj, params.score, dropout=dropout, training=training, rng=rng)
    if assignment is None:
        if training and dropedge > 0.0:
            assignment, stats = parse_with_dropedge(scores, dropedge, rng)
        else:
            assignment, stats = parse(scores)
    else:
        stats = ParseStats.empty()
    if params.separate_gnn is not None:
        base = gcn_forward(x, adj, params.separate_gnn, norm=norm)
    else:
        base = h
    clustered = deepsets(base, assignment, params.set_inner, params.set_outer,
                         dropout=dropout, training=training, rng=rng)
    y = cluster_mask_value(svals, ui, uj, assignment)
    features = tape.elementwise_mul(clustered, tape.broadcast_col(y, clustered.data.shape[1]))
    coarse = coarsen_adjacency(adj, assignment)
    return PoolStep(assignment=assignment, scores=scores, mask=y, features=features,
                    coarse_adj=coarse, stats=stats, hidden=base)


def pool_layer(graph: Graph, params: PoolParams, *, training: bool = False,
               dropedge: float = 0.0, dropout: float = 0.0, rng=None):
    """Graph-in, graph-out view of one pooling level.

    Returns (coarsened graph, assignment, edge scores, mask vector).  Features
    must already have the width the shared parameters expect.
    """
    step = pool_step(Value(graph.features), graph.adj, params, training=training,
                     dropedge=dropedge, dropout=dropout, rng=rng)
    pooled = Graph(adj=step.coarse_adj, features=step.features.data, label=graph.label)
    return pooled, step.assignment, step.scores, step.mask.data.reshape(-1)


def unpool_layer(x_coarse: Value, assignment: Assignment, stored_adj: SparseAdjacency,
                 h_skip: Value = None):
    """Expand cluster features back to their member nodes.

    Every node receives its cluster's row; the fine-level adjacency is the one
    stored by the matching pooling level.  A skip connection, when given, is
    added elementwise.
    """
    if assignment.n_clusters != x_coarse.data.shape[0]:
        raise ValueError(
            f"assignment has {assignment.n_clusters} clusters, features have "
            f"{x_coarse.data.shape[0]} rows")
    if stored_adj.n != assignment.n_nodes:
        raise ValueError("stored adjacency does not match the assignment's fine level")
    x = tape.gather_rows(x_coarse, assignment.cluster_of)
    if h_skip is not None:
        x = tape.add(x, h_skip)
    return x, stored_adj


def save_params(path, named: dict):
    """Checkpoint named parameters as JSON; float64 repr round-trips exactly,
    so a reload reproduces bit-identical forward passes."""
    doc = {
        name: {"shape": list(v.data.shape), "data": v.data.reshape(-1).tolist()}
        for name, v in named.items()
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_params(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    return {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc.items()
    }


def assign_params(named: dict, loaded: dict):
    """Load checkpointed arrays into live parameter Values, shape-checked."""
    missing = set(named) - set(loaded)
    extra = set(loaded) - set(named)
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, v in named.items():
        arr = loaded[name]
        if tuple(arr.shape) != tuple(v.data.shape):
            raise ValueError(f"parameter {name!r} has shape {arr.shape}, expected {v.data.shape}")
        v.data = arr.copy()
