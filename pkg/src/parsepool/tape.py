"""Reverse-mode automatic differentiation over dense float64 matrices.

Every differentiable tensor is a :class:`Value` holding its data and a lazily
allocated gradient slot; operations build a DAG of parent links with a local
backward closure.  :func:`backward` walks the DAG once in reverse topological
order.  Gradients accumulate across calls, which is how per-graph losses in a
batch are reduced; call :func:`zero_grads` between optimizer steps.

Index structures (assignments, gather indices, sparse propagation matrices)
are constants: no gradient ever flows through them.
"""
from __future__ import annotations

import numpy as np


class Value:
    """One tape node: a float64 array plus a gradient slot and parent links."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Value(shape={self.data.shape})"


def _toposort(root: Value):
    order = []
    seen = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def backward(root: Value):
    """Accumulate d(root)/d(node) into every reachable node's grad slot.

    root must be scalar-valued (a 0-d or single-element array).
    """
    if root.data.size != 1:
        raise ValueError("backward requires a scalar root value")
    order = _toposort(root)
    for node in order:
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
    root.grad = root.grad + np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


def zero_grads(values):
    for v in values:
        v.grad = None


def add(a: Value, b: Value) -> Value:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Value(a.data + b.data, (a, b))

    def _bw():
        a.grad += out.grad
        b.grad += out.grad

    out._backward = _bw
    return out


def add_const(a: Value, c) -> Value:
    out = Value(a.data + np.asarray(c, dtype=np.float64), (a,))

    def _bw():
        a.grad += out.grad

    out._backward = _bw
    return out


def add_bias(x: Value, b: Value) -> Value:
    """Row-broadcast bias: x is (n, d), b is (1, d)."""
    if b.data.shape != (1, x.data.shape[1]):
        raise ValueError(f"bias shape {b.data.shape} does not fit {x.data.shape}")
    out = Value(x.data + b.data, (x, b))

    def _bw():
        x.grad += out.grad
        b.grad += out.grad.sum(axis=0, keepdims=True)

    out._backward = _bw
    return out


def elementwise_mul(a: Value, b: Value) -> Value:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Value(a.data * b.data, (a, b))

    def _bw():
        a.grad += out.grad * b.data
        b.grad += out.grad * a.data

    out._backward = _bw
    return out


def mul_const(a: Value, c) -> Value:
    c = np.asarray(c, dtype=np.float64)
    out = Value(a.data * c, (a,))

    def _bw():
        a.grad += out.grad * c

    out._backward = _bw
    return out


def matmul(a: Value, b: Value) -> Value:
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.data.shape} @ {b.data.shape}")
    out = Value(a.data @ b.data, (a, b))

    def _bw():
        a.grad += out.grad @ b.data.T
        b.grad += a.data.T @ out.grad

    out._backward = _bw
    return out


def _csr_matmul_dense(adj, x: np.ndarray) -> np.ndarray:
    """CSR (n×n) times dense (n×d): contributions reduced row by row."""
    out = np.zeros((adj.n, x.shape[1]))
    if adj.nnz == 0:
        return out
    contrib = adj.vals[:, None] * x[adj.cols]
    counts = adj.row_counts()
    nonempty = np.nonzero(counts)[0]
    out[nonempty] = np.add.reduceat(contrib, adj.indptr[nonempty], axis=0)
    return out


def spmm_symmetric(adj, x: Value) -> Value:
    """Multiply by a constant symmetric sparse matrix (message passing step).

    Symmetry makes the backward pass the same multiplication applied to the
    incoming gradient.
    """
    if adj.n != x.data.shape[0]:
        raise ValueError(f"operator is {adj.n}×{adj.n}, features have {x.data.shape[0]} rows")
    out = Value(_csr_matmul_dense(adj, x.data), (x,))

    def _bw():
        x.grad += _csr_matmul_dense(adj, out.grad)

    out._backward = _bw
    return out


def relu(x: Value) -> Value:
    out = Value(np.maximum(x.data, 0.0), (x,))

    def _bw():
        x.grad += out.grad * (x.data > 0.0)

    out._backward = _bw
    return out


def sigmoid(x: Value) -> Value:
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Value(s, (x,))

    def _bw():
        x.grad += out.grad * s * (1.0 - s)

    out._backward = _bw
    return out


def gather_rows(x: Value, idx) -> Value:
    """Select rows x[idx]; the adjoint scatter-adds gradients back."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Value(x.data[idx], (x,))

    def _bw():
        np.add.at(x.grad, idx, out.grad)

    out._backward = _bw
    return out


def scatter_add_rows(x: Value, idx, num_rows: int) -> Value:
    """Sum rows of x into num_rows buckets given by idx; adjoint of gather."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size != x.data.shape[0]:
        raise ValueError("one bucket index per row is required")
    acc = np.zeros((num_rows, x.data.shape[1]))
    np.add.at(acc, idx, x.data)
    out = Value(acc, (x,))

    def _bw():
        x.grad += out.grad[idx]

    out._backward = _bw
    return out


def broadcast_col(v: Value, width: int) -> Value:
    """Tile a column vector (p, 1) into a (p, width) matrix."""
    if v.data.ndim != 2 or v.data.shape[1] != 1:
        raise ValueError("broadcast_col expects a column vector")
    out = Value(np.repeat(v.data, width, axis=1), (v,))

    def _bw():
        v.grad += out.grad.sum(axis=1, keepdims=True)

    out._backward = _bw
    return out


def concat_cols(a: Value, b: Value) -> Value:
    """Stack two matrices side by side; the gradient splits back columnwise."""
    if a.data.shape[0] != b.data.shape[0]:
        raise ValueError(f"concat row mismatch {a.data.shape} vs {b.data.shape}")
    da = a.data.shape[1]
    out = Value(np.concatenate([a.data, b.data], axis=1), (a, b))

    def _bw():
        a.grad += out.grad[:, :da]
        b.grad += out.grad[:, da:]

    out._backward = _bw
    return out


def dropout(x: Value, ratio: float, rng: np.random.Generator) -> Value:
    """Inverted dropout with a fixed random mask; apply only while training."""
    if ratio <= 0.0:
        return x
    mask = (rng.random(x.data.shape) >= ratio) / (1.0 - ratio)
    return mul_const(x, mask)


def softmax_cross_entropy(logits: Value, targets) -> Value:
    """Mean cross entropy of row-wise softmax against integer class targets."""
    targets = np.asarray(targets, dtype=np.int64)
    z = logits.data
    if z.ndim != 2 or targets.shape != (z.shape[0],):
        raise ValueError("logits must be (rows, classes) with one target per row")
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(z.shape[0])
    out = Value(-logp[rows, targets].mean(), (logits,))

    def _bw():
        soft = np.exp(logp)
        soft[rows, targets] -= 1.0
        logits.grad += float(out.grad) * soft / z.shape[0]

    out._backward = _bw
    return out


def mse(pred: Value, target) -> Value:
    """Mean squared error over all entries against a constant target."""
    target = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target.shape:
        raise ValueError(f"mse shape mismatch {pred.data.shape} vs {target.shape}")
    diff = pred.data - target
    out = Value(np.mean(diff * diff), (pred,))

    def _bw():
        pred.grad += float(out.grad) * 2.0 * diff / diff.size

    out._backward = _bw
    return out


def autodiff_grads(f, params: dict):
    """Run f once, backpropagate, and return {name: gradient array}."""
    zero_grads(params.values())
    loss = f()
    backward(loss)
    return {name: np.array(p.grad) for name, p in params.items()}


def central_difference_grads(f, params: dict, epsilon: float = 1e-5):
    """Entry-by-entry central differences of the scalar loss f()."""
    grads = {}
    for name, p in params.items():
        base = p.data.copy()
        g = np.zeros_like(base)
        flat_base = base.reshape(-1)
        flat_g = g.reshape(-1)
        for k in range(flat_base.size):
            for sign in (+1.0, -1.0):
                bumped = base.copy()
                bumped.reshape(-1)[k] = flat_base[k] + sign * epsilon
                p.data = bumped
                flat_g[k] += sign * f().data.item()
            flat_g[k] /= 2.0 * epsilon
        p.data = base
        grads[name] = g
    return grads


def compare_grads(ad: dict, fd: dict, floor: float = 1e-6):
    """Worst relative disagreement between two gradient dictionaries.

    Returns (max relative error, name of the worst parameter); an entry's
    relative error is |ad - fd| / max(|fd|, floor).  Raises on non-finite
    values in either dictionary.
    """
    worst, worst_name = 0.0, ""
    for name in ad:
        if not (np.all(np.isfinite(ad[name])) and np.all(np.isfinite(fd[name]))):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        rel = np.abs(ad[name] - fd[name]) / np.maximum(np.abs(fd[name]), floor)
        peak = float(rel.max()) if rel.size else 0.0
        if peak >= worst:
            worst, worst_name = peak, name
    return worst, worst_name


def finite_difference_check(f, params: dict, epsilon: float = 1e-5, floor: float = 1e-6):
    """Compare reverse-mode gradients of f against central differences.

    Returns (max relative error, name of the worst parameter).
    """
    ad = autodiff_grads(f, params)
    fd = central_difference_grads(f, params, epsilon=epsilon)
    return compare_grads(ad, fd, floor=floor)
