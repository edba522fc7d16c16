"""Command-line surface: structure decoding, training drivers, benchmarks,
and the gradient check.

Every command takes ``--seed`` and ``--out`` and drops a ``manifest.json``
next to its outputs recording the command, the effective configuration, and
the repository version, so a run can be reproduced byte for byte (timing
columns aside).
"""
from __future__ import annotations

import argparse
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import psutil
from threadpoolctl import threadpool_limits

from . import tape
from .datasets import (
    Dataset,
    gen_classification_corpus,
    gen_erdos_renyi,
    gen_grid,
    gen_ring,
    kfold_splits,
    load_tu_format,
)
from .graphs import Assignment, Graph, coarsen_adjacency, load_graph_json
from .layers import cluster_mask, init_pool_params, init_mlp, pool_step, save_params
from .models import GraphModel, NodeModel, ReconstructionModel, graph_forward, reconstruct_forward
from .parsing import EdgeScores, parse, random_scores, uniform_scores
from .tape import Value
from .training import TrainConfig, evaluate, fit, write_history_csv

GRADCHECK_TOLERANCE = 1e-4


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_manifest(out_dir: Path, command: str, config: dict, seed: int, outputs):
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "git_describe": _git_describe(),
        "outputs": sorted(str(p) for p in outputs),
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return path


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    return doc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# parse: decode a pooling tree from static scores
# ---------------------------------------------------------------------------

def _static_scores(adj, source, rng, level, file_values):
    if source == "uniform":
        return uniform_scores(adj)
    if source == "random":
        return random_scores(adj, rng)
    if level == 0:
        ui, uj, _ = adj.undirected_pairs()
        values = np.empty(ui.size)
        for k, (i, j) in enumerate(zip(ui, uj)):
            values[k] = file_values[(int(i), int(j))]
        return EdgeScores.from_pair_values(adj, ui, uj, values)
    # File scores only describe the input graph; coarser levels fall back to
    # uniform scores so the decode can keep contracting.
    return uniform_scores(adj)


def _write_tree_json(path, graph, levels, final_n):
    doc = {
        "n": graph.n,
        "height": len(levels),
        "final_n": final_n,
        "levels": [
            {
                "n": lvl["n"],
                "clusters": lvl["assignment"].n_clusters,
                "assignment": lvl["assignment"].cluster_of.tolist(),
                "cluster_sizes": lvl["assignment"].counts().tolist(),
                "mask": lvl["mask"].tolist(),
                "stats": {
                    "outer_iterations": lvl["stats"].outer_iterations,
                    "total_inner_iterations": lvl["stats"].total_inner_iterations,
                    "inner_iterations": list(lvl["stats"].inner_iterations),
                },
            }
            for lvl in levels
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def _write_tree_dot(path, graph, levels, final_n):
    """Pooling tree as DOT: leaves are input nodes, internal vertices are
    clusters, one rank per height."""
    lines = ["digraph pooling_tree {", "  rankdir=BT;", "  node [shape=circle];"]
    sizes = [graph.n] + [lvl["assignment"].n_clusters for lvl in levels]
    for level, size in enumerate(sizes):
        names = " ".join(f'"L{level}_{i}"' for i in range(size))
        lines.append(f"  {{ rank=same; {names} }}")
    for level, lvl in enumerate(levels):
        for node, cluster in enumerate(lvl["assignment"].cluster_of):
            lines.append(f'  "L{level}_{node}" -> "L{level + 1}_{int(cluster)}";')
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_parse(args) -> int:
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    graph = load_graph_json(args.graph)
    file_values = None
    if args.scores not in ("random", "uniform"):
        with open(args.scores) as fh:
            doc = json.load(fh)
        with open(args.graph) as fh:
            edges = json.load(fh)["edges"]
        raw = doc["scores"] if isinstance(doc, dict) else doc
        if len(raw) != len(edges):
            raise ValueError(
                f"score file has {len(raw)} values for {len(edges)} edges")
        file_values = {}
        for (i, j), s in zip(edges, raw):
            file_values[(min(i, j), max(i, j))] = float(s)

    adj, feats = graph.adj, graph.features
    levels = []
    for level in range(args.max_height):
        if adj.nnz == 0:
            break
        scores = _static_scores(adj, args.scores, rng, level, file_values)
        assignment, stats = parse(scores)
        levels.append({
            "n": adj.n,
            "assignment": assignment,
            "mask": cluster_mask(scores, assignment),
            "stats": stats,
        })
        feats = assignment.pool_rows(feats)
        adj = coarsen_adjacency(adj, assignment)

    tree_json = out / "tree.json"
    tree_dot = out / "tree.dot"
    _write_tree_json(tree_json, graph, levels, adj.n)
    _write_tree_dot(tree_dot, graph, levels, adj.n)
    manifest = write_manifest(out, "parse", {"graph": str(args.graph),
                                             "scores": str(args.scores),
                                             "max_height": args.max_height},
                              args.seed, [tree_json, tree_dot])
    print(f"pooling tree: {' -> '.join(str(s) for s in [graph.n] + [l['assignment'].n_clusters for l in levels])}")
    print(f"wrote {tree_json}, {tree_dot}, {manifest}")
    return 0


# ---------------------------------------------------------------------------
# training drivers
# ---------------------------------------------------------------------------

def cmd_train_graph(args) -> int:
    out = _out_dir(args)
    doc = _load_config(args.config)
    per_class = int(doc.pop("per_class", 100))
    folds = int(doc.pop("folds", 5))
    doc.setdefault("seed", args.seed)
    config = TrainConfig.from_dict(doc)

    dataset = gen_classification_corpus(per_class, config.seed)
    splits = kfold_splits(dataset, folds, config.seed)
    outputs = []
    rows = []
    model = None
    for fold, (train_idx, valid_idx, test_idx) in enumerate(splits):
        rng = np.random.default_rng(config.seed + fold)
        model = GraphModel.build(
            rng, dataset.feature_dim, config.width, dataset.num_classes,
            gcn_layers=config.gcn_layers, score_layers=config.score_layers,
            set_layers=config.set_layers, max_height=config.max_height)
        result = fit(model, [dataset.graphs[i] for i in train_idx],
                     [dataset.graphs[i] for i in valid_idx], config)
        metrics = evaluate(model, [dataset.graphs[i] for i in test_idx])
        rows.append({"fold": fold, "test_accuracy": metrics["accuracy"],
                     "mean_height": metrics["mean_height"],
                     "best_epoch": result.best_epoch})
        hist_path = out / f"history_fold{fold}.csv"
        write_history_csv(hist_path, result.history)
        ckpt_path = out / f"checkpoint_fold{fold}.json"
        save_params(ckpt_path, model.named_params())
        outputs += [hist_path, ckpt_path]
        print(f"fold {fold}: test accuracy {metrics['accuracy']:.3f} "
              f"(best epoch {result.best_epoch})")

    summary = out / "folds.csv"
    with open(summary, "w") as fh:
        fh.write("fold,test_accuracy,mean_height,best_epoch\n")
        for r in rows:
            fh.write(f"{r['fold']},{r['test_accuracy']},{r['mean_height']},{r['best_epoch']}\n")
    outputs.append(summary)

    # Realized pooling heights per graph under the last fold's model.
    heights_path = out / "heights.csv"
    with open(heights_path, "w") as fh:
        fh.write("graph,label,height\n")
        for k, g in enumerate(dataset.graphs):
            _, trace = graph_forward(g, model)
            fh.write(f"{k},{g.label},{int(trace.per_graph_heights()[0])}\n")
    outputs.append(heights_path)

    mean_acc = float(np.mean([r["test_accuracy"] for r in rows]))
    print(f"mean test accuracy over {folds} folds: {mean_acc:.3f}")
    write_manifest(out, "train-graph",
                   {**doc, "per_class": per_class, "folds": folds},
                   config.seed, outputs)
    return 0


def cmd_train_node(args) -> int:
    out = _out_dir(args)
    doc = _load_config(args.config)
    files = {key: doc.pop(key, None) for key in
             ("node_file", "edge_file", "indicator_file", "label_file")}
    if files["edge_file"] is None or files["indicator_file"] is None or files["label_file"] is None:
        raise ValueError("config must provide edge_file, indicator_file, and label_file")
    train_fraction = float(doc.pop("train_fraction", 0.8))
    doc.setdefault("seed", args.seed)
    config = TrainConfig.from_dict(doc)

    dataset = load_tu_format(files["node_file"], files["edge_file"],
                             files["indicator_file"], files["label_file"])
    if dataset.task != "node-classification":
        raise ValueError("train-node needs per-node labels (provide node_file)")
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(dataset.graphs))
    n_train = max(1, int(train_fraction * order.size))
    n_valid = max(1, (order.size - n_train) // 2) if order.size - n_train >= 2 else 0
    train = [dataset.graphs[i] for i in order[:n_train]]
    valid = [dataset.graphs[i] for i in order[n_train:n_train + n_valid]]

    model = NodeModel.build(
        rng, dataset.feature_dim, config.width, dataset.num_classes,
        gcn_layers=config.gcn_layers, score_layers=config.score_layers,
        set_layers=config.set_layers, max_height=config.max_height)
    result = fit(model, train, valid, config)
    metrics = evaluate(model, dataset.graphs)

    hist_path = out / "metrics.csv"
    write_history_csv(hist_path, result.history)
    ckpt_path = out / "checkpoint.json"
    save_params(ckpt_path, model.named_params())
    write_manifest(out, "train-node", {**doc, **files, "train_fraction": train_fraction},
                   config.seed, [hist_path, ckpt_path])
    print(f"node accuracy over all graphs: {metrics['accuracy']:.3f}")
    return 0


def _reconstruction_graph(doc: dict) -> Graph:
    kind = doc.pop("graph", "ring")
    if kind == "ring":
        return gen_ring(int(doc.pop("n", 64)))
    if kind == "grid":
        return gen_grid(int(doc.pop("rows", 8)), int(doc.pop("cols", 8)))
    return load_graph_json(kind)


def cmd_reconstruct(args) -> int:
    out = _out_dir(args)
    doc = _load_config(args.config)
    graph = _reconstruction_graph(doc)
    pool_height = int(doc.pop("pool_height", 1))
    doc.setdefault("seed", args.seed)
    doc.setdefault("max_epochs", 5000)
    doc.setdefault("patience", 1000)
    config = TrainConfig.from_dict(doc)

    rng = np.random.default_rng(config.seed)
    model = ReconstructionModel.build(
        rng, graph.feature_dim, config.width, gcn_layers=config.gcn_layers,
        score_layers=config.score_layers, set_layers=config.set_layers,
        max_height=pool_height)
    result = fit(model, [graph], None, config)

    recovered, trace = reconstruct_forward(graph, model)
    mse_value = float(np.mean((recovered.data - graph.features) ** 2))
    variance = float(np.mean((graph.features - graph.features.mean(axis=0)) ** 2))

    coords_path = out / "coords.csv"
    with open(coords_path, "w") as fh:
        fh.write("node,x,y,xr,yr\n")
        for i in range(graph.n):
            x, y = graph.features[i]
            xr, yr = recovered.data[i]
            fh.write(f"{i},{x},{y},{xr},{yr}\n")
    hist_path = out / "metrics.csv"
    write_history_csv(hist_path, result.history)
    ckpt_path = out / "checkpoint.json"
    save_params(ckpt_path, model.named_params())
    write_manifest(out, "reconstruct", {**doc, "pool_height": pool_height},
                   config.seed, [coords_path, hist_path, ckpt_path])
    print(f"reconstruction mse {mse_value:.5f} "
          f"({100.0 * mse_value / variance:.1f}% of coordinate variance), "
          f"pooled {graph.n} -> {trace.final_graph.n} nodes")
    return 0


# ---------------------------------------------------------------------------
# benchmarks
# ---------------------------------------------------------------------------

def _parse_sizes(text) -> list:
    return [int(tok) for tok in text.split(",") if tok]


def cmd_bench_time(args) -> int:
    out = _out_dir(args)
    sizes = _parse_sizes(args.sizes)
    rng = np.random.default_rng(args.seed)
    width = args.width
    rows = []
    with threadpool_limits(limits=1):
        for n in sizes:
            m = n * n // 10
            graph = gen_erdos_renyi(n, m, rng)
            params = init_pool_params(rng, width)
            stem = init_mlp(rng, [graph.feature_dim, width])
            samples = []
            last = None
            for _ in range(args.reps):
                start = time.perf_counter()
                x = Value(graph.features @ stem.weights[0].data + stem.biases[0].data)
                last = pool_step(x, graph.adj, params)
                samples.append((time.perf_counter() - start) * 1e3)
            rows.append({
                "n": n, "m": m, "median_ms": float(np.median(samples)),
                "reps": args.reps,
                "outer_iterations": last.stats.outer_iterations,
                "total_inner_iterations": last.stats.total_inner_iterations,
            })
            print(f"n={n} m={m}: median forward pooling {rows[-1]['median_ms']:.2f} ms")
    path = out / "times.csv"
    with open(path, "w") as fh:
        fh.write("n,m,median_ms,reps,outer_iterations,total_inner_iterations\n")
        for r in rows:
            fh.write(f"{r['n']},{r['m']},{r['median_ms']},{r['reps']},"
                     f"{r['outer_iterations']},{r['total_inner_iterations']}\n")
    write_manifest(out, "bench-time", {"sizes": sizes, "reps": args.reps,
                                       "width": width}, args.seed, [path])
    return 0


def cmd_bench_mem(args) -> int:
    out = _out_dir(args)
    sizes = _parse_sizes(args.sizes)
    rng = np.random.default_rng(args.seed)
    process = psutil.Process()
    rows = []
    with threadpool_limits(limits=1):
        for n in sizes:
            m = 2 * n
            graph = gen_erdos_renyi(n, m, rng)
            scores = random_scores(graph.adj, rng)
            assignment, _ = parse(scores)
            coarse = coarsen_adjacency(graph.adj, assignment)
            rows.append({
                "n": n, "m": m,
                "nnz_S": assignment.nnz,
                "nnz_coarse": coarse.nnz,
                "rss_mb": process.memory_info().rss / 2**20,
            })
            print(f"n={n} m={m}: nnz(S)={assignment.nnz} nnz(A')={coarse.nnz} "
                  f"rss={rows[-1]['rss_mb']:.1f} MiB")
    path = out / "memory.csv"
    with open(path, "w") as fh:
        fh.write("n,m,nnz_S,nnz_coarse,rss_mb\n")
        for r in rows:
            fh.write(f"{r['n']},{r['m']},{r['nnz_S']},{r['nnz_coarse']},{r['rss_mb']}\n")
    write_manifest(out, "bench-mem", {"sizes": sizes}, args.seed, [path])
    return 0


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------

def gradcheck_setup(seed: int, *, n: int = 12, width: int = 8, classes: int = 3):
    """Small fixed instance: returns (loss closure, named params).

    The pooling structure is decoded once and then held fixed, so the closure
    is a plain differentiable function of the parameters.
    """
    rng = np.random.default_rng(seed)
    graph = gen_erdos_renyi(n, 2 * n, rng)
    graph = Graph(adj=graph.adj, features=rng.standard_normal((n, 3)))
    model = GraphModel.build(rng, 3, width, classes)
    target = np.asarray([int(rng.integers(0, classes))])
    _, trace = graph_forward(graph, model)
    structure = trace.assignments()

    def loss():
        logits, _ = graph_forward(graph, model, structure=structure)
        return tape.softmax_cross_entropy(logits, target)

    return loss, model.named_params()


def cmd_gradcheck(args) -> int:
    out = _out_dir(args)
    loss, params = gradcheck_setup(args.seed)
    ad = tape.autodiff_grads(loss, params)
    if args.inject_error:
        name = sorted(ad)[0]
        ad[name] = ad[name] + 1.0
    fd = tape.central_difference_grads(loss, params)
    err, worst = tape.compare_grads(ad, fd)
    passed = err < GRADCHECK_TOLERANCE
    report = {
        "max_relative_error": err,
        "worst_parameter": worst,
        "tolerance": GRADCHECK_TOLERANCE,
        "injected_error": bool(args.inject_error),
        "passed": passed,
    }
    path = out / "gradcheck.json"
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
    write_manifest(out, "gradcheck", {"inject_error": bool(args.inject_error)},
                   args.seed, [path])
    print(f"max relative gradient error {err:.3e} (worst parameter {worst!r}); "
          f"{'PASS' if passed else 'FAIL'} at tolerance {GRADCHECK_TOLERANCE}")
    return 0 if passed else 1


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parsepool",
        description="Parse-driven hierarchical graph pooling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="decode a pooling tree from static edge scores")
    p.add_argument("--graph", required=True, help="input graph JSON")
    p.add_argument("--scores", default="random",
                   help="'random', 'uniform', or a JSON file with per-edge scores")
    p.add_argument("--max-height", type=int, default=64)
    p.set_defaults(func=cmd_parse)

    for name, func in (("train-graph", cmd_train_graph),
                       ("train-node", cmd_train_node),
                       ("reconstruct", cmd_reconstruct)):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.set_defaults(func=func)

    p = sub.add_parser("bench-time", help="time one forward pooling pass on dense random graphs")
    p.add_argument("--sizes", default="64,128,256", help="comma-separated node counts")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--width", type=int, default=64)
    p.set_defaults(func=cmd_bench_time)

    p = sub.add_parser("bench-mem", help="structural memory proxies on sparse random graphs")
    p.add_argument("--sizes", default="1024,4096,16384", help="comma-separated node counts")
    p.set_defaults(func=cmd_bench_mem)

    p = sub.add_parser("gradcheck", help="compare backpropagation against central differences")
    p.add_argument("--inject-error", action="store_true",
                   help="corrupt one gradient to confirm the check detects it")
    p.set_defaults(func=cmd_gradcheck)

    for p in sub.choices.values():
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="runs/latest", help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
