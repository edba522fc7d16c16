"""Parse-driven hierarchical graph pooling.

A pooling structure is decoded per graph from learned edge scores: each node
keeps its strongest incident edge, connected groups of kept edges become
clusters, and the coarsened graph is pooled again until it stops shrinking.
The package bundles the sparse graph core, the decoding algorithm, a small
reverse-mode tape sufficient to train the models, graph- and node-level model
assemblies, data utilities, and a CLI for training, benchmarks, and checks.
"""
from .graphs import (
    Assignment,
    Graph,
    SparseAdjacency,
    build_graph,
    coarsen_adjacency,
    connected_components,
    permute_graph,
)
from .parsing import DominantEdges, EdgeScores, ParseStats, dom, expand, gen, parse, parse_with_dropedge
from .models import GraphModel, NodeModel, PoolingTrace, ReconstructionModel
from .training import TrainConfig, adam_step, evaluate, fit

__all__ = [
    "Assignment",
    "Graph",
    "SparseAdjacency",
    "build_graph",
    "coarsen_adjacency",
    "connected_components",
    "permute_graph",
    "DominantEdges",
    "EdgeScores",
    "ParseStats",
    "dom",
    "expand",
    "gen",
    "parse",
    "parse_with_dropedge",
    "GraphModel",
    "NodeModel",
    "PoolingTrace",
    "ReconstructionModel",
    "TrainConfig",
    "adam_step",
    "evaluate",
    "fit",
]

__version__ = "0.1.0"
