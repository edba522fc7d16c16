"""Optimization loop, losses, metrics, and early stopping."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import tape
from .datasets import batch_graphs
from .models import (
    GraphModel,
    NodeModel,
    ReconstructionModel,
    graph_forward,
    node_forward,
    reconstruct_forward,
)


@dataclass
class TrainConfig:
    learning_rate: float = 3e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    dropedge: float = 0.0
    dropout: float = 0.0
    seed: int = 0
    width: int = 32
    gcn_layers: int = 2
    score_layers: int = 1
    set_layers: int = 1
    max_height: int = 32

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("learning rate, batch size, and epochs must be positive")
        if self.patience < 0:
            raise ValueError("patience must be non-negative")
        if not 0.0 <= self.dropedge < 1.0:
            raise ValueError("dropedge ratio must lie in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if min(self.width, self.gcn_layers, self.score_layers, self.set_layers,
               self.max_height) <= 0:
            raise ValueError("width, layer counts, and max height must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"invalid config key(s): {', '.join(sorted(unknown))}")
        return cls(**doc)


@dataclass
class AdamState:
    """First/second moment accumulators per parameter, plus the step count."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def to_json_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: arr.tolist() for k, arr in self.m.items()},
            "v": {k: arr.tolist() for k, arr in self.v.items()},
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AdamState":
        return cls(
            m={k: np.asarray(v, dtype=np.float64) for k, v in doc["m"].items()},
            v={k: np.asarray(v, dtype=np.float64) for k, v in doc["v"].items()},
            t=int(doc["t"]),
        )


def adam_step(params: dict, state: AdamState, lr: float, *,
              betas=(0.9, 0.999), eps: float = 1e-8) -> bool:
    """One Adam update from the gradients stored on the parameters.

    Returns False (and applies nothing) when any gradient is non-finite.
    """
    grads = {}
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            return False
        grads[name] = g
    b1, b2 = betas
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return True


def _forward_loss(model, graphs, *, training, config, rng):
    """Loss plus bookkeeping for one batch/list of graphs.

    Returns (loss Value, #correct or None, #predictions, summed height, #graphs).
    """
    de, do = (config.dropedge, config.dropout) if training else (0.0, 0.0)
    if isinstance(model, GraphModel):
        batch, member = batch_graphs(graphs)
        targets = np.asarray([g.label for g in graphs], dtype=np.int64)
        logits, trace = graph_forward(batch, model, member=member, training=training,
                                      dropedge=de, dropout=do, rng=rng)
        loss = tape.softmax_cross_entropy(logits, targets)
        correct = int((logits.data.argmax(axis=1) == targets).sum())
        heights = trace.per_graph_heights()
        return loss, correct, targets.size, int(heights.sum()), len(graphs)
    if isinstance(model, NodeModel):
        total_correct = total_nodes = total_height = 0
        losses = []
        for g in graphs:
            logits, trace = node_forward(g, model, training=training, dropedge=de,
                                         dropout=do, rng=rng)
            targets = np.asarray(g.label, dtype=np.int64)
            losses.append(tape.softmax_cross_entropy(logits, targets))
            total_correct += int((logits.data.argmax(axis=1) == targets).sum())
            total_nodes += targets.size
            total_height += int(trace.per_graph_heights().sum())
        loss = losses[0]
        for extra in losses[1:]:
            loss = tape.add(loss, extra)
        if len(losses) > 1:
            loss = tape.mul_const(loss, 1.0 / len(losses))
        return loss, total_correct, total_nodes, total_height, len(graphs)
    if isinstance(model, ReconstructionModel):
        total_height = 0
        losses = []
        for g in graphs:
            recovered, trace = reconstruct_forward(g, model, training=training,
                                                   dropedge=de, dropout=do, rng=rng)
            losses.append(tape.mse(recovered, g.features))
            total_height += int(trace.per_graph_heights().sum())
        loss = losses[0]
        for extra in losses[1:]:
            loss = tape.add(loss, extra)
        if len(losses) > 1:
            loss = tape.mul_const(loss, 1.0 / len(losses))
        return loss, None, len(graphs), total_height, len(graphs)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def evaluate(model, graphs) -> dict:
    """Deterministic metrics on a list of graphs (no dropout, no edge drop)."""
    if isinstance(model, GraphModel):
        batch, member = batch_graphs(graphs)
        targets = np.asarray([g.label for g in graphs], dtype=np.int64)
        logits, trace = graph_forward(batch, model, member=member)
        pred = logits.data.argmax(axis=1)
        loss = float(tape.softmax_cross_entropy(logits, targets).data)
        per_class = {}
        for c in np.unique(targets):
            mask = targets == c
            per_class[int(c)] = float((pred[mask] == c).mean())
        return {
            "loss": loss,
            "accuracy": float((pred == targets).mean()),
            "per_class_accuracy": per_class,
            "mean_height": float(trace.per_graph_heights().mean()),
        }
    if isinstance(model, NodeModel):
        correct = total = 0
        loss_sum = 0.0
        heights = []
        for g in graphs:
            logits, trace = node_forward(g, model)
            targets = np.asarray(g.label, dtype=np.int64)
            loss_sum += float(tape.softmax_cross_entropy(logits, targets).data)
            correct += int((logits.data.argmax(axis=1) == targets).sum())
            total += targets.size
            heights.extend(trace.per_graph_heights().tolist())
        return {
            "loss": loss_sum / len(graphs),
            "accuracy": correct / total,
            "mean_height": float(np.mean(heights)),
        }
    if isinstance(model, ReconstructionModel):
        errors, heights = [], []
        for g in graphs:
            recovered, trace = reconstruct_forward(g, model)
            errors.append(float(np.mean((recovered.data - g.features) ** 2)))
            heights.extend(trace.per_graph_heights().tolist())
        return {
            "loss": float(np.mean(errors)),
            "mse": float(np.mean(errors)),
            "mean_height": float(np.mean(heights)),
        }
    raise TypeError(f"unsupported model type {type(model).__name__}")


@dataclass
class FitResult:
    history: list
    best_epoch: int
    best_valid_loss: float
    best_params: dict


def fit(model, train_graphs, valid_graphs, config: TrainConfig,
        stop_below: float = None) -> FitResult:
    """Minibatch training with early stopping on validation loss.

    The model is left holding the best-validation parameters; the history has
    one row per epoch (train/valid loss, metric, mean realized pooling height,
    wallclock).  With no validation graphs the training loss is the stopping
    criterion.  ``stop_below`` ends training as soon as the stopping loss
    falls under it.  Runs are reproducible for a fixed config seed.
    """
    if not train_graphs:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(config.seed)
    params = model.named_params()
    state = AdamState()
    best_loss = np.inf
    best_epoch = -1
    best_params = {}
    since_best = 0
    history = []
    for epoch in range(config.max_epochs):
        start = time.perf_counter()
        order = rng.permutation(len(train_graphs))
        train_loss = 0.0
        correct = predictions = height_sum = graph_count = 0
        for lo in range(0, order.size, config.batch_size):
            chunk = [train_graphs[i] for i in order[lo:lo + config.batch_size]]
            tape.zero_grads(params.values())
            loss, c, p, h, g = _forward_loss(model, chunk, training=True,
                                             config=config, rng=rng)
            tape.backward(loss)
            if not adam_step(params, state, config.learning_rate):
                history.append({"epoch": epoch, "note": "skipped non-finite gradients"})
                continue
            train_loss += float(loss.data) * len(chunk)
            if c is not None:
                correct += c
            predictions += p
            height_sum += h
            graph_count += g
        train_loss /= len(train_graphs)
        if valid_graphs:
            valid = evaluate(model, valid_graphs)
            valid_loss = valid["loss"]
            metric = valid.get("accuracy", valid.get("mse"))
        else:
            valid_loss = train_loss
            is_classifier = isinstance(model, (GraphModel, NodeModel))
            metric = correct / predictions if is_classifier else train_loss
        history.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "valid_loss": valid_loss,
            "metric": metric,
            "mean_height": height_sum / max(graph_count, 1),
            "wallclock_ms": (time.perf_counter() - start) * 1e3,
        })
        if valid_loss < best_loss:
            best_loss = valid_loss
            best_epoch = epoch
            best_params = {k: v.data.copy() for k, v in params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                break
        if stop_below is not None and best_loss < stop_below:
            break
    for name, value in best_params.items():
        params[name].data = value.copy()
    return FitResult(history=history, best_epoch=best_epoch,
                     best_valid_loss=best_loss, best_params=best_params)


HISTORY_FIELDS = ("epoch", "train_loss", "valid_loss", "metric", "mean_height", "wallclock_ms")


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in history:
            writer.writerow(row)


def save_adam_state(path, state: AdamState):
    with open(path, "w") as fh:
        json.dump(state.to_json_dict(), fh)


def load_adam_state(path) -> AdamState:
    with open(path) as fh:
        return AdamState.from_json_dict(json.load(fh))
