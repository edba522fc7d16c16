"""Model assemblies: the recurrent graph-level classifier, the node-level
encoder/decoder, and the coordinate-reconstruction autoencoder.

Each model applies one shared pooling level recursively until the graph stops
shrinking (it is edgeless, possibly a single node) or a height cap is hit,
then reads out.  The realized pooling tree is returned as a
:class:`PoolingTrace`, which also serves as a frozen structure: replaying its
assignments turns the forward pass into a plain differentiable function of the
parameters, which is what gradient checks and the backward pass rely on.

Batches are block-diagonal graphs with a per-node membership vector; clusters
never span graphs because the decode only merges across edges.  A graph that
reaches its fixed point early simply contributes singleton clusters while the
rest of the batch keeps pooling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .graphs import Assignment, Graph, SparseAdjacency, component_count
from .layers import (
    MLPParams,
    PoolParams,
    PoolStep,
    gcn_forward,
    init_mlp,
    init_pool_params,
    mlp_forward,
    pool_step,
    unpool_layer,
)
from .parsing import EdgeScores, ParseStats
from .tape import Value

DEFAULT_MAX_HEIGHT = 32


@dataclass(frozen=True)
class TraceLevel:
    """Input graph, decoded assignment, scores, and mask of one pooling level."""

    graph: Graph
    assignment: Assignment
    scores: EdgeScores
    mask: np.ndarray
    member: np.ndarray
    stats: ParseStats


@dataclass(frozen=True)
class PoolingTrace:
    """The realized pooling tree of one forward pass."""

    levels: tuple
    final_graph: Graph
    final_member: np.ndarray

    @property
    def height(self) -> int:
        return len(self.levels)

    @property
    def num_graphs(self) -> int:
        return int(self.final_member.max()) + 1 if self.final_member.size else 0

    def sizes(self):
        return [lvl.graph.n for lvl in self.levels] + [self.final_graph.n]

    def assignments(self):
        return [lvl.assignment for lvl in self.levels]

    def component_counts(self):
        return [component_count(lvl.graph.adj) for lvl in self.levels] + [
            component_count(self.final_graph.adj)
        ]

    def per_graph_heights(self) -> np.ndarray:
        """Number of levels in which each batched graph actually shrank."""
        g = self.num_graphs
        sizes = [np.bincount(lvl.member, minlength=g) for lvl in self.levels]
        sizes.append(np.bincount(self.final_member, minlength=g))
        heights = np.zeros(g, dtype=np.int64)
        for before, after in zip(sizes[:-1], sizes[1:]):
            heights += after < before
        return heights


def _pool_member(assignment: Assignment, member: np.ndarray) -> np.ndarray:
    out = np.zeros(assignment.n_clusters, dtype=np.int64)
    out[assignment.cluster_of] = member
    return out


def _run_levels(x: Value, adj: SparseAdjacency, member: np.ndarray, params: PoolParams,
                *, max_height: int, training: bool, dropedge: float, dropout: float,
                rng, structure=None):
    """Apply the shared pooling level until the graph stops shrinking.

    With ``structure`` given, exactly those assignments are replayed and the
    decode never runs.  Returns (trace levels, live steps, final x/adj/member).
    """
    levels, steps = [], []
    k = 0
    while True:
        if structure is not None:
            if k >= len(structure):
                break
            forced = structure[k]
        else:
            forced = None
            if adj.nnz == 0 or k >= max_height:
                break
        step = pool_step(x, adj, params, training=training, dropedge=dropedge,
                         dropout=dropout, rng=rng, assignment=forced)
        levels.append(TraceLevel(
            graph=Graph(adj=adj, features=x.data),
            assignment=step.assignment,
            scores=step.scores,
            mask=step.mask.data.reshape(-1).copy(),
            member=member,
            stats=step.stats,
        ))
        steps.append(step)
        member = _pool_member(step.assignment, member)
        x, adj = step.features, step.coarse_adj
        k += 1
    return levels, steps, x, adj, member


def _finish_trace(levels, x, adj, member) -> PoolingTrace:
    return PoolingTrace(
        levels=tuple(levels),
        final_graph=Graph(adj=adj, features=x.data),
        final_member=member,
    )


@dataclass
class GraphModel:
    """Recurrent pooling classifier: pool to the fixed point, then aggregate
    the remaining nodes into one vector per graph and map it to class logits."""

    stem: MLPParams
    pool: PoolParams
    readout_inner: MLPParams
    readout_head: MLPParams
    max_height: int = DEFAULT_MAX_HEIGHT

    @classmethod
    def build(cls, rng, in_dim: int, width: int, num_classes: int, *,
              gcn_layers: int = 2, score_layers: int = 1, set_layers: int = 1,
              max_height: int = DEFAULT_MAX_HEIGHT) -> "GraphModel":
        return cls(
            stem=init_mlp(rng, [in_dim, width]),
            pool=init_pool_params(rng, width, gcn_layers=gcn_layers,
                                  score_layers=score_layers, set_layers=set_layers),
            readout_inner=init_mlp(rng, [width, width]),
            readout_head=init_mlp(rng, [width, num_classes]),
            max_height=max_height,
        )

    def named_params(self) -> dict:
        out = self.stem.named("stem")
        out.update(self.pool.named("pool"))
        out.update(self.readout_inner.named("readout.inner"))
        out.update(self.readout_head.named("readout.head"))
        return out


def graph_forward(graph: Graph, model: GraphModel, *, member=None, training=False,
                  dropedge: float = 0.0, dropout: float = 0.0, rng=None,
                  structure=None):
    """Returns (per-graph logits Value, pooling trace)."""
    if member is None:
        member = np.zeros(graph.n, dtype=np.int64)
    num_graphs = int(member.max()) + 1 if member.size else 0
    x = mlp_forward(Value(graph.features), model.stem)
    levels, _, x, adj, member = _run_levels(
        x, graph.adj, member, model.pool, max_height=model.max_height,
        training=training, dropedge=dropedge, dropout=dropout, rng=rng,
        structure=structure)
    phi = tape.relu(mlp_forward(x, model.readout_inner, dropout=dropout,
                                training=training, rng=rng))
    pooled = tape.scatter_add_rows(phi, member, num_graphs)
    logits = mlp_forward(pooled, model.readout_head)
    return logits, _finish_trace(levels, x, adj, member)


@dataclass
class NodeModel:
    """Encoder/decoder for per-node prediction: pool while storing the
    assignment, adjacency, and a separately encoded feature at every level,
    then expand back in reverse with skip connections and classify."""

    stem: MLPParams
    pool: PoolParams
    classifier: MLPParams
    combine: MLPParams = None
    skip_mode: str = "add"
    max_height: int = DEFAULT_MAX_HEIGHT

    @classmethod
    def build(cls, rng, in_dim: int, width: int, num_classes: int, *,
              gcn_layers: int = 2, score_layers: int = 1, set_layers: int = 1,
              skip_mode: str = "add", max_height: int = DEFAULT_MAX_HEIGHT) -> "NodeModel":
        if skip_mode not in ("add", "concat"):
            raise ValueError(f"unknown skip mode {skip_mode!r}")
        return cls(
            stem=init_mlp(rng, [in_dim, width]),
            pool=init_pool_params(rng, width, gcn_layers=gcn_layers,
                                  score_layers=score_layers, set_layers=set_layers,
                                  separate_gnn=True),
            classifier=init_mlp(rng, [width, num_classes]),
            combine=init_mlp(rng, [2 * width, width]) if skip_mode == "concat" else None,
            skip_mode=skip_mode,
            max_height=max_height,
        )

    def named_params(self) -> dict:
        out = self.stem.named("stem")
        out.update(self.pool.named("pool"))
        out.update(self.classifier.named("classifier"))
        if self.combine is not None:
            out.update(self.combine.named("combine"))
        return out


def node_forward(graph: Graph, model: NodeModel, *, height=None, member=None,
                 training=False, dropedge: float = 0.0, dropout: float = 0.0,
                 rng=None, structure=None):
    """Returns (per-node logits Value with exactly n rows, pooling trace)."""
    if member is None:
        member = np.zeros(graph.n, dtype=np.int64)
    cap = model.max_height if height is None else height
    x = mlp_forward(Value(graph.features), model.stem)
    levels, steps, x, adj, fmember = _run_levels(
        x, graph.adj, member, model.pool, max_height=cap, training=training,
        dropedge=dropedge, dropout=dropout, rng=rng, structure=structure)
    # Seed the decoder with the separate encoder applied to the coarsest graph;
    # with no pooling this reduces to that encoder alone on the input.
    z = gcn_forward(x, adj, model.pool.separate_gnn)
    for level, step in zip(reversed(levels), reversed(steps)):
        if model.skip_mode == "add":
            z, _ = unpool_layer(z, level.assignment, level.graph.adj, h_skip=step.hidden)
        else:
            z, _ = unpool_layer(z, level.assignment, level.graph.adj)
            z = mlp_forward(tape.concat_cols(z, step.hidden), model.combine)
    logits = mlp_forward(z, model.classifier, dropout=dropout, training=training, rng=rng)
    return logits, _finish_trace(levels, x, adj, fmember)


@dataclass
class ReconstructionModel:
    """Autoencoder for coordinate features: pool, expand back with no skip
    path, smooth on the original adjacency, and regress the coordinates."""

    stem: MLPParams
    pool: PoolParams
    decoder_gcn: MLPParams
    head: MLPParams
    max_height: int = 1

    @classmethod
    def build(cls, rng, in_dim: int, width: int, *, gcn_layers: int = 2,
              score_layers: int = 1, set_layers: int = 1, max_height: int = 1,
              out_dim: int = None) -> "ReconstructionModel":
        out_dim = in_dim if out_dim is None else out_dim
        return cls(
            stem=init_mlp(rng, [in_dim, width]),
            pool=init_pool_params(rng, width, gcn_layers=gcn_layers,
                                  score_layers=score_layers, set_layers=set_layers),
            decoder_gcn=init_mlp(rng, [width] * (gcn_layers + 1)),
            head=init_mlp(rng, [width, out_dim]),
            max_height=max_height,
        )

    def named_params(self) -> dict:
        out = self.stem.named("stem")
        out.update(self.pool.named("pool"))
        out.update(self.decoder_gcn.named("decoder"))
        out.update(self.head.named("head"))
        return out


def reconstruct_forward(graph: Graph, model: ReconstructionModel, *, training=False,
                        dropedge: float = 0.0, dropout: float = 0.0, rng=None,
                        structure=None):
    """Returns (recovered features Value, pooling trace); output keeps the
    input's row count, and its features come only from pooling and expansion."""
    member = np.zeros(graph.n, dtype=np.int64)
    x = mlp_forward(Value(graph.features), model.stem)
    levels, _, x, adj, fmember = _run_levels(
        x, graph.adj, member, model.pool, max_height=model.max_height,
        training=training, dropedge=dropedge, dropout=dropout, rng=rng,
        structure=structure)
    z = x
    for level in reversed(levels):
        z, _ = unpool_layer(z, level.assignment, level.graph.adj)
    z = gcn_forward(z, graph.adj, model.decoder_gcn)
    recovered = mlp_forward(z, model.head)
    return recovered, _finish_trace(levels, x, adj, fmember)
