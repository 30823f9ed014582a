"""Minimal reverse-mode differentiation over float64 numpy arrays.

Only the handful of operations needed by the encoder/decoder networks are
provided: affine maps, elementwise nonlinearities, arithmetic with
row-broadcasting, reductions and column concatenation.  Every operation
returns a :class:`Node`; calling :func:`backward` on a scalar node
accumulates ``d root / d leaf`` into the ``grad`` attribute of every leaf
created with ``requires_grad=True``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


class Node:
    """A value in the computation graph.

    Leaves are created directly; interior nodes are created by the
    operation functions in this module.  Gradients are accumulated
    additively on leaves and must be cleared with :func:`zero_grad`.
    """

    __slots__ = ("value", "grad", "parents", "op", "backward_fn", "requires_grad")

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        parents: tuple = (),
        op: str = "leaf",
        backward_fn: Callable | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.op = op
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.value) if (requires_grad and not parents) else None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def parameter(value) -> Node:
    """Leaf node whose gradient is tracked."""
    return Node(np.array(value, dtype=np.float64), requires_grad=True)


def constant(value) -> Node:
    return Node(value, requires_grad=False)


def lift(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(value, parents: tuple, op: str, backward_fn) -> Node:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Node(value, requires_grad=False, op=op)
    return Node(value, requires_grad=True, parents=parents, op=op, backward_fn=backward_fn)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Node, b: Node) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# linear maps
# ---------------------------------------------------------------------------


def affine(x, weight, bias=None) -> Node:
    """Row-wise ``weight @ row + bias`` for a batch-first ``x``.

    ``x`` is ``batch x n``, ``weight`` is ``m x n`` and ``bias`` has length
    ``m``.  Passing ``bias=None`` gives the pure linear map.
    """
    x, weight = lift(x), lift(weight)
    b = None if bias is None else lift(bias)
    if x.value.ndim != 2 or weight.value.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"affine: input {x.shape} incompatible with weight {weight.shape}"
        )
    if b is not None and b.shape != (weight.shape[0],):
        raise DimensionError(f"affine: bias {b.shape} incompatible with weight {weight.shape}")
    out = x.value @ weight.value.T
    if b is not None:
        out = out + b.value

    def backward_fn(g):
        gx = g @ weight.value if x.requires_grad else None
        gw = g.T @ x.value if weight.requires_grad else None
        if b is None:
            return gx, gw
        gb = g.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if b is None else (x, weight, b)
    return _make(out, parents, "affine", backward_fn)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def tanh_op(x) -> Node:
    x = lift(x)
    out = np.tanh(x.value)
    return _make(out, (x,), "tanh", lambda g: (g * (1.0 - out * out),))


def relu_op(x) -> Node:
    x = lift(x)
    mask = x.value > 0
    out = np.where(mask, x.value, 0.0)
    return _make(out, (x,), "relu", lambda g: (g * mask,))


def exp_op(x) -> Node:
    x = lift(x)
    out = np.exp(x.value)
    return _make(out, (x,), "exp", lambda g: (g * out,))


def log_op(x) -> Node:
    x = lift(x)
    if np.any(x.value <= 0):
        raise ValueError("log_op: input must be strictly positive")
    return _make(np.log(x.value), (x,), "log", lambda g: (g / x.value,))


def square(x) -> Node:
    x = lift(x)
    return _make(x.value * x.value, (x,), "square", lambda g: (2.0 * g * x.value,))


def neg(x) -> Node:
    x = lift(x)
    return _make(-x.value, (x,), "neg", lambda g: (-g,))


def add(a, b) -> Node:
    a, b = lift(a), lift(b)
    _broadcast_shape("add", a, b)
    out = a.value + b.value
    return _make(
        out, (a, b), "add", lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def sub(a, b) -> Node:
    a, b = lift(a), lift(b)
    _broadcast_shape("sub", a, b)
    out = a.value - b.value
    return _make(
        out, (a, b), "sub", lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    )


def mul(a, b) -> Node:
    a, b = lift(a), lift(b)
    _broadcast_shape("mul", a, b)
    out = a.value * b.value

    def backward_fn(g):
        ga = _unbroadcast(g * b.value, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.value, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), "mul", backward_fn)


def scale(x, c: float) -> Node:
    """Multiply by a Python scalar."""
    x = lift(x)
    c = float(c)
    return _make(x.value * c, (x,), "scale", lambda g: (g * c,))


# ---------------------------------------------------------------------------
# reductions and structure
# ---------------------------------------------------------------------------


def sum_op(x, axis: int | None = None) -> Node:
    x = lift(x)
    out = x.value.sum(axis=axis)

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(out, (x,), "sum", backward_fn)


def concat(parts: Sequence, axis: int = 1) -> Node:
    """Concatenate along ``axis`` (columns by default)."""
    nodes = [lift(p) for p in parts]
    if not nodes:
        raise DimensionError("concat: no inputs")
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: incompatible shapes {[n.shape for n in nodes]}"
        ) from None
    edges = np.cumsum([0] + [n.shape[axis] for n in nodes])

    def backward_fn(g):
        return tuple(
            np.take(g, np.arange(edges[i], edges[i + 1]), axis=axis)
            for i in range(len(nodes))
        )

    return _make(out, tuple(nodes), "concat", backward_fn)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate gradients of a scalar ``root`` into every tracked leaf."""
    if root.value.size != 1:
        raise ValueError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(_topological_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad += g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(leaves: Iterable[Node]) -> None:
    for leaf in leaves:
        leaf.grad = np.zeros_like(leaf.value)
