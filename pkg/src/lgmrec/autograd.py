"""Reverse-mode differentiation on a flat tape of numpy values.

Only the operations the model needs are provided. Every value is a float64
ndarray wrapped in a :class:`Node`; creating an op appends the node to its
:class:`Tape`, so the node list is already topologically ordered and a single
reverse sweep computes all gradients of a scalar root.

Sparse matrices enter only as constants: gradients never flow into graph
structure, only through it.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ConfigError, DimensionError
from .sparse import SparseMatrixCSR


class Node:
    """One tape entry: an op kind, its parents, and the forward value."""

    __slots__ = ("tape", "idx", "op", "value", "parents", "requires_grad", "_backward")

    def __init__(self, tape, idx, op, value, parents, requires_grad, backward):
        self.tape = tape
        self.idx = idx
        self.op = op
        self.value = value
        self.parents = parents
        self.requires_grad = requires_grad
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Node#{self.idx}({self.op}, shape={self.value.shape})"


class Tape:
    """Ordered op recording plus the leaf registry used by :meth:`backward`."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: list[Node] = []

    def _record(self, op, value, parents=(), backward=None, requires_grad=None) -> Node:
        value = np.asarray(value, dtype=np.float64)
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        node = Node(self, len(self.nodes), op, value, tuple(parents), requires_grad, backward)
        self.nodes.append(node)
        return node

    def leaf(self, value) -> Node:
        """Register a trainable parameter. The array is shared, not copied."""
        node = self._record("leaf", value, requires_grad=True)
        self.leaves.append(node)
        return node

    def constant(self, value) -> Node:
        """Wrap a non-trainable array (inputs, features, noise)."""
        return self._record("const", value, requires_grad=False)

    def backward(self, root: Node) -> dict[Node, np.ndarray]:
        """Gradients of the scalar ``root`` for every registered leaf.

        Leaves that do not reach the root get zero gradients.
        """
        if root.tape is not self:
            raise ValueError("root node belongs to a different tape")
        if root.value.shape != ():
            raise ValueError(f"backward requires a scalar root, got shape {root.value.shape}")
        grads: dict[int, np.ndarray] = {root.idx: np.asarray(1.0)}
        for node in reversed(self.nodes[: root.idx + 1]):
            g = grads.get(node.idx)
            if g is None or not node.parents or node._backward is None:
                continue
            for parent, pg in zip(node.parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(parent.idx)
                # out-of-place accumulation: closures may hand back views of g
                grads[parent.idx] = pg if acc is None else acc + pg
        out = {}
        for leaf in self.leaves:
            out[leaf] = grads.get(leaf.idx, np.zeros_like(leaf.value))
        return out


def _check_same_shape(a: Node, b: Node, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ")


def add(a: Node, b: Node) -> Node:
    _check_same_shape(a, b, "add")
    return a.tape._record("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _check_same_shape(a, b, "sub")
    return a.tape._record("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def scale(a: Node, factor: float) -> Node:
    factor = float(factor)
    return a.tape._record("scale", a.value * factor, (a,), lambda g: (g * factor,))


def mul(a: Node, b: Node) -> Node:
    """Elementwise product."""
    _check_same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return a.tape._record("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def matmul(a: Node, b: Node, transpose_b: bool = False) -> Node:
    """Dense product ``a @ b`` (or ``a @ b.T``); gradients reach both operands."""
    av, bv = a.value, b.value
    inner_b = bv.shape[1] if transpose_b else bv.shape[0]
    if av.shape[1] != inner_b:
        raise DimensionError(f"matmul: inner dims {av.shape} x {bv.shape} (transpose_b={transpose_b})")
    if transpose_b:
        out = av @ bv.T
        backward = lambda g: (g @ bv, g.T @ av)
    else:
        out = av @ bv
        backward = lambda g: (g @ bv.T, av.T @ g)
    return a.tape._record("matmul", out, (a, b), backward)


def spmm(s: SparseMatrixCSR, d: Node) -> Node:
    """Sparse-dense product. The sparse operand is constant data."""
    if s.cols != d.value.shape[0]:
        raise DimensionError(f"spmm: {s.rows}x{s.cols} CSR with dense {d.value.shape}")
    out = s.matmul_dense(d.value)
    return d.tape._record("spmm", out, (d,), lambda g: (s.transpose_matmul_dense(g),))


def transpose(a: Node) -> Node:
    return a.tape._record("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))


def concat_rows(a: Node, b: Node) -> Node:
    if a.value.shape[1] != b.value.shape[1]:
        raise DimensionError("concat_rows: column counts differ")
    split = a.value.shape[0]
    out = np.concatenate([a.value, b.value], axis=0)
    return a.tape._record("concat_rows", out, (a, b), lambda g: (g[:split], g[split:]))


def gather_rows(a: Node, indices) -> Node:
    """Select rows by index; backward scatter-adds (duplicates accumulate)."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.value.shape[0]):
        raise IndexError("gather_rows: row index out of range")
    av = a.value

    def backward(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return (out,)

    return a.tape._record("gather_rows", av[idx], (a,), backward)


def row_l2_normalize(a: Node) -> Node:
    """Scale each row to unit Euclidean norm; zero rows pass through as zeros."""
    av = a.value
    norms = np.linalg.norm(av, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    out = av / safe
    nonzero = norms != 0.0

    def backward(g):
        inner = np.sum(g * out, axis=1, keepdims=True)
        return (np.where(nonzero, (g - out * inner) / safe, 0.0),)

    return a.tape._record("row_l2_normalize", out, (a,), backward)


def softmax_rows(a: Node, temperature: float = 1.0) -> Node:
    """Row-wise softmax of ``a / temperature``, stabilized by max subtraction."""
    if temperature <= 0:
        raise ConfigError(f"softmax temperature must be positive, got {temperature}")
    z = a.value / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        inner = np.sum(g * out, axis=1, keepdims=True)
        return (out * (g - inner) / temperature,)

    return a.tape._record("softmax_rows", out, (a,), backward)


def dropout(a: Node, ratio: float, rng: np.random.Generator, training: bool) -> Node:
    """Inverted dropout: survivors scaled by 1/(1-ratio); identity in eval mode."""
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"dropout ratio must lie in [0, 1), got {ratio}")
    if not training or ratio == 0.0:
        return a.tape._record("dropout", a.value, (a,), lambda g: (g,))
    mask = (rng.random(a.value.shape) >= ratio) / (1.0 - ratio)
    return a.tape._record("dropout", a.value * mask, (a,), lambda g: (g * mask,))


def softplus(a: Node) -> Node:
    """Elementwise log(1 + exp(x)), overflow-safe."""
    av = a.value
    out = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))
    sigma = np.empty_like(av)
    pos = av >= 0
    sigma[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    enx = np.exp(av[~pos])
    sigma[~pos] = enx / (1.0 + enx)
    return a.tape._record("softplus", out, (a,), lambda g: (g * sigma,))


def logsumexp_rows(a: Node) -> Node:
    """Row-wise log-sum-exp, shape (n, 1)."""
    av = a.value
    m = av.max(axis=1, keepdims=True)
    e = np.exp(av - m)
    s = e.sum(axis=1, keepdims=True)
    out = m + np.log(s)
    soft = e / s
    return a.tape._record("logsumexp_rows", out, (a,), lambda g: (g * soft,))


def rowwise_sum(a: Node) -> Node:
    """Sum each row, shape (n, 1)."""
    cols = a.value.shape[1]
    out = a.value.sum(axis=1, keepdims=True)
    return a.tape._record("rowwise_sum", out, (a,), lambda g: (np.repeat(g, cols, axis=1),))


def sum_all(a: Node) -> Node:
    """Sum of all entries, a scalar node."""
    shape = a.value.shape
    return a.tape._record("sum_all", a.value.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Node) -> Node:
    return scale(sum_all(a), 1.0 / a.value.size)


def finite_difference_check(
    loss_and_grad: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Worst-case mismatch between analytic gradients and central differences.

    ``loss_and_grad`` must be deterministic in ``params`` (stochastic ops frozen
    by the caller: eval mode, or identically reseeded streams per call). Each
    coordinate is perturbed in place and restored. The reported error for a
    coordinate is ``|a - n| / max(1, |a|, |n|)``, i.e. absolute for small
    gradients and relative for large ones.
    """
    _, analytic = loss_and_grad(params)
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        ga = analytic[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            f_plus = loss_and_grad(params)[0]
            flat[k] = orig - eps
            f_minus = loss_and_grad(params)[0]
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(ga[k])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst = err
    return worst
