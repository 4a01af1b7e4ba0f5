"""Reverse-mode automatic differentiation over numpy arrays.

The model builds a fresh computation graph per step out of the ops below;
``Tensor.backward()`` walks it once in reverse topological order. Only the
ops this pipeline needs are implemented, every one with an exact (or, at
ties, documented subgradient) backward rule. Gradients accumulate on any
node created with ``requires_grad=True`` and on every node derived from one.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyInputError, ShapeMismatchError


class Tensor:
    __slots__ = ("data", "grad", "parents", "back", "requires_grad")

    def __init__(self, data, parents=(), back=None, requires_grad=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.parents = parents
        self.back = back
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Push d(self)/d(node) to every reachable grad-requiring node.

        ``self`` must be a scalar. Intermediate grads are kept; call sites
        typically only read leaf (parameter) grads.
        """
        if self.data.size != 1:
            raise ShapeMismatchError("backward() requires a scalar output")
        # Iterative post-order DFS. A node is marked visited when expanded,
        # not when scheduled: marking early would pin shared nodes too close
        # to their first consumer and run their backward before later
        # consumers have contributed gradient.
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.back is not None:
                node.back(node.grad)

    # Operator sugar; all arithmetic routes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return "Tensor(shape=%r, requires_grad=%r)" % (self.shape, self.requires_grad)


def constant(data, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=False)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype), requires_grad=False)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    out = a.data + b.data

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(out, (a, b), back)


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    out = a.data - b.data

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return Tensor(out, (a, b), back)


def neg(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, -g)

    return Tensor(-a.data, (a,), back)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    out = a.data * b.data

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out, (a, b), back)


def div(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    out = a.data / b.data

    def back(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor(out, (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatchError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(
            "matmul shapes %r x %r" % (a.data.shape, b.data.shape)
        )
    out = a.data @ b.data

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return Tensor(out, (a, b), back)


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent

    def back(g):
        _accum(a, g * exponent * a.data ** (exponent - 1.0))

    return Tensor(out, (a,), back)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def back(g):
        _accum(a, g / a.data)

    return Tensor(out, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def back(g):
        _accum(a, g * out * (1.0 - out))

    return Tensor(out, (a,), back)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def back(g):
        _accum(a, g * (1.0 - out * out))

    return Tensor(out, (a,), back)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def back(g):
        _accum(a, g * (a.data > 0))

    return Tensor(out, (a,), back)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; on exact ties the gradient routes to ``a``."""
    out = np.where(a.data >= b.data, a.data, b.data)

    def back(g):
        take_a = a.data >= b.data
        _accum(a, _unbroadcast(g * take_a, a.data.shape))
        _accum(b, _unbroadcast(g * ~take_a, b.data.shape))

    return Tensor(out, (a, b), back)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)

    def back(g):
        _accum(a, g * ((a.data > lo) & (a.data < hi)))

    return Tensor(out, (a,), back)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return Tensor(out, (a,), back)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def back(g):
        _accum(a, g.reshape(old))

    return Tensor(a.data.reshape(shape), (a,), back)


def transpose(a: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)

    def back(g):
        _accum(a, g.transpose(inverse))

    return Tensor(a.data.transpose(axes), (a,), back)


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def back(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        _accum(a, full)

    return Tensor(out, (a,), back)


def concat(parts, axis=0) -> Tensor:
    if not parts:
        raise EmptyInputError("concat of an empty list")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(p, g[tuple(sl)])

    return Tensor(out, tuple(parts), back)


def stack(parts, axis=0) -> Tensor:
    if not parts:
        raise EmptyInputError("stack of an empty list")
    out = np.stack([p.data for p in parts], axis=axis)

    def back(g):
        slices = np.moveaxis(g, axis, 0)
        for p, gp in zip(parts, slices):
            _accum(p, gp)

    return Tensor(out, tuple(parts), back)


def pad2d(a: Tensor, before_after: int) -> Tensor:
    """Zero-pad the two leading (spatial) axes of an (n, n, c) tensor."""
    p = before_after
    out = np.pad(a.data, ((p, p), (p, p), (0, 0)))

    def back(g):
        _accum(a, g[p : p + a.data.shape[0], p : p + a.data.shape[1], :])

    return Tensor(out, (a,), back)
