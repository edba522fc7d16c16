"""Synthetic graph generators, a TU-style text loader, splits, and batching."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import Graph, SparseAdjacency, build_graph

DEGREE_CAP = 16  # one-hot features clamp rare higher degrees to this bucket

TASK_GRAPH = "graph-classification"
TASK_NODE = "node-classification"
TASK_RECONSTRUCTION = "reconstruction"


@dataclass
class Dataset:
    graphs: list
    task: str
    num_classes: int

    def __post_init__(self):
        dims = {g.feature_dim for g in self.graphs}
        if len(dims) > 1:
            raise ValueError(f"inconsistent feature dimensions across graphs: {sorted(dims)}")
        if self.task == TASK_GRAPH:
            for k, g in enumerate(self.graphs):
                if not isinstance(g.label, (int, np.integer)) or not 0 <= g.label < self.num_classes:
                    raise ValueError(f"graph {k} has label {g.label!r} outside 0..{self.num_classes - 1}")

    def __len__(self):
        return len(self.graphs)

    @property
    def feature_dim(self):
        return self.graphs[0].feature_dim if self.graphs else 0

    def labels(self) -> np.ndarray:
        return np.asarray([g.label for g in self.graphs], dtype=np.int64)


def degree_one_hot(adj: SparseAdjacency, cap: int = DEGREE_CAP) -> np.ndarray:
    deg = np.minimum(adj.row_counts(), cap)
    out = np.zeros((adj.n, cap + 1))
    out[np.arange(adj.n), deg] = 1.0
    return out


def gen_ring(n: int) -> Graph:
    """Cycle graph with unit-circle coordinates as features."""
    if n < 3:
        raise ValueError("a ring needs at least 3 nodes")
    edges = [(i, (i + 1) % n) for i in range(n)]
    theta = 2.0 * np.pi * np.arange(n) / n
    coords = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return build_graph(n, edges, features=coords)


def gen_grid(rows: int, cols: int) -> Graph:
    """4-neighbor lattice with coordinates normalized into [-1, 1]^2."""
    if rows < 2 or cols < 2:
        raise ValueError("a grid needs at least 2 rows and 2 columns")
    n = rows * cols
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    rr, cc = np.divmod(np.arange(n), cols)
    x = 2.0 * cc / (cols - 1) - 1.0
    y = 2.0 * rr / (rows - 1) - 1.0
    coords = np.stack([x, y], axis=1)
    return build_graph(n, edges, features=coords)


def gen_random_tree(n: int, rng: np.random.Generator) -> Graph:
    """Random recursive tree: node i attaches to a uniform earlier node."""
    if n < 2:
        raise ValueError("a tree needs at least 2 nodes")
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    g = build_graph(n, edges, features=np.zeros((n, 1)))
    return Graph(adj=g.adj, features=degree_one_hot(g.adj))


def gen_erdos_renyi(n: int, m: int, seed) -> Graph:
    """Uniform simple graph with exactly m undirected edges; unit features.

    Deterministic for a given seed (an int or a Generator).
    """
    max_edges = n * (n - 1) // 2
    if m > max_edges:
        raise ValueError(f"{m} edges requested but an {n}-node simple graph holds {max_edges}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chosen = np.empty(0, dtype=np.int64)
    while chosen.size < m:
        draw = rng.integers(0, max_edges, size=2 * (m - chosen.size) + 16)
        chosen = np.unique(np.concatenate([chosen, draw]))[: max_edges]
        if chosen.size >= m:
            # np.unique sorts, which would bias the subset; reshuffle and cut.
            rng.shuffle(chosen)
            chosen = chosen[:m]
            break
    # Decode linear indices of the strict lower triangle: e = i(i-1)/2 + j.
    i = (np.ceil((np.sqrt(8.0 * (chosen + 1) + 1) - 1) / 2)).astype(np.int64)
    j = (chosen - i * (i - 1) // 2).astype(np.int64)
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    adj = SparseAdjacency.from_coo(n, rows, cols, np.ones(rows.size))
    return Graph(adj=adj, features=np.ones((n, 1)))


def gen_classification_corpus(per_class: int, seed) -> Dataset:
    """Balanced 3-class corpus: rings, grids, and random trees, all with
    degree one-hot features.  Class 0 = ring, 1 = grid, 2 = tree."""
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    rng = np.random.default_rng(seed)
    graphs = []
    for _ in range(per_class):
        ring = gen_ring(int(rng.integers(12, 33)))
        graphs.append(Graph(adj=ring.adj, features=degree_one_hot(ring.adj), label=0))
    for _ in range(per_class):
        grid = gen_grid(int(rng.integers(3, 7)), int(rng.integers(3, 7)))
        graphs.append(Graph(adj=grid.adj, features=degree_one_hot(grid.adj), label=1))
    for _ in range(per_class):
        tree = gen_random_tree(int(rng.integers(12, 33)), rng)
        graphs.append(Graph(adj=tree.adj, features=tree.features, label=2))
    return Dataset(graphs=graphs, task=TASK_GRAPH, num_classes=3)


def _read_int_lines(path, what):
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(int(line))
            except ValueError as exc:
                raise ValueError(f"{what} line {lineno}: not an integer: {line!r}") from exc
    return values


def load_tu_format(node_file, edge_file, indicator_file, label_file) -> Dataset:
    """Load a dataset from TU-style text files.

    ``edge_file`` holds 1-indexed "i, j" pairs, ``indicator_file`` maps each
    node to its graph, ``label_file`` one label per graph, and the optional
    ``node_file`` one integer label per node (features become its one-hot;
    degree one-hot otherwise).  Inconsistencies are rejected with the
    offending line number.
    """
    indicator = _read_int_lines(indicator_file, "indicator file")
    if not indicator:
        raise ValueError("indicator file is empty")
    graph_ids = sorted(set(indicator))
    if graph_ids != list(range(1, len(graph_ids) + 1)):
        raise ValueError("indicator file must number graphs contiguously from 1")
    n_total = len(indicator)
    node_graph = np.asarray(indicator, dtype=np.int64) - 1

    raw_labels = _read_int_lines(label_file, "label file")
    if len(raw_labels) != len(graph_ids):
        raise ValueError(
            f"label file has {len(raw_labels)} entries for {len(graph_ids)} graphs")
    classes = sorted(set(raw_labels))
    remap = {c: k for k, c in enumerate(classes)}
    labels = [remap[c] for c in raw_labels]

    node_labels = None
    if node_file is not None:
        node_labels = _read_int_lines(node_file, "node label file")
        if len(node_labels) != n_total:
            raise ValueError(
                f"node label file has {len(node_labels)} entries for {n_total} nodes")

    pairs = []
    with open(edge_file) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise ValueError(f"edge file line {lineno}: expected two indices: {line!r}")
            a, b = int(parts[0]) - 1, int(parts[1]) - 1
            if not (0 <= a < n_total and 0 <= b < n_total):
                raise ValueError(f"edge file line {lineno}: node index out of range")
            if node_graph[a] != node_graph[b]:
                raise ValueError(f"edge file line {lineno}: edge crosses graph boundary")
            pairs.append((a, b))

    # Nodes of each graph, offset to local indices.
    counts = np.bincount(node_graph, minlength=len(graph_ids))
    offsets = np.concatenate([[0], np.cumsum(counts)])
    order = np.argsort(node_graph, kind="stable")
    local = np.empty(n_total, dtype=np.int64)
    for gid in range(len(graph_ids)):
        members = order[offsets[gid]:offsets[gid + 1]]
        local[members] = np.arange(members.size)

    per_graph_edges = [set() for _ in graph_ids]
    for a, b in pairs:
        if a == b:
            continue
        gid = node_graph[a]
        per_graph_edges[gid].add((min(local[a], local[b]), max(local[a], local[b])))

    if node_labels is not None:
        label_classes = sorted(set(node_labels))
        node_remap = {c: k for k, c in enumerate(label_classes)}
        node_labels = np.asarray([node_remap[c] for c in node_labels], dtype=np.int64)
        feat_dim = len(label_classes)

    graphs = []
    for gid in range(len(graph_ids)):
        n = int(counts[gid])
        members = order[offsets[gid]:offsets[gid + 1]]
        g = build_graph(n, sorted(per_graph_edges[gid]), features=np.zeros((n, 1)))
        if node_labels is not None:
            feats = np.zeros((n, feat_dim))
            feats[local[members], node_labels[members]] = 1.0
            per_node = np.zeros(n, dtype=np.int64)
            per_node[local[members]] = node_labels[members]
            graphs.append(Graph(adj=g.adj, features=feats, label=per_node))
        else:
            graphs.append(Graph(adj=g.adj, features=degree_one_hot(g.adj), label=labels[gid]))

    if node_labels is not None:
        return Dataset(graphs=graphs, task=TASK_NODE, num_classes=feat_dim)
    return Dataset(graphs=graphs, task=TASK_GRAPH, num_classes=len(classes))


def kfold_splits(dataset: Dataset, k: int, seed):
    """Stratified k-fold splits; each entry is (train, valid, test) index
    arrays with the validation set carved out of the training portion."""
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = np.random.default_rng(seed)
    labels = dataset.labels()
    by_class = {}
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        if idx.size < k:
            raise ValueError(f"class {int(c)} has only {idx.size} members for {k} folds")
        rng.shuffle(idx)
        by_class[int(c)] = np.array_split(idx, k)
    splits = []
    for fold in range(k):
        test = np.concatenate([by_class[c][fold] for c in by_class])
        rest = np.concatenate(
            [by_class[c][f] for c in by_class for f in range(k) if f != fold])
        rng.shuffle(rest)
        n_valid = max(1, rest.size // k)
        splits.append((np.sort(rest[n_valid:]), np.sort(rest[:n_valid]), np.sort(test)))
    return splits


def batch_graphs(graphs):
    """Stack graphs into one block-diagonal graph.

    Returns (batched graph, membership vector).  The batch has no cross-graph
    edges, so decoding and readout respect graph boundaries by construction.
    """
    if not graphs:
        raise ValueError("cannot batch an empty list of graphs")
    dims = {g.feature_dim for g in graphs}
    if len(dims) > 1:
        raise ValueError(f"feature dimensions differ across graphs: {sorted(dims)}")
    sizes = [g.n for g in graphs]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rows, cols, vals = [], [], []
    for g, off in zip(graphs, offsets):
        r, c, v = g.adj.to_coo()
        rows.append(r + off)
        cols.append(c + off)
        vals.append(v)
    n = int(offsets[-1])
    adj = SparseAdjacency.from_coo(
        n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))
    features = np.concatenate([g.features for g in graphs], axis=0)
    member = np.repeat(np.arange(len(graphs), dtype=np.int64), sizes)
    return Graph(adj=adj, features=features), member
