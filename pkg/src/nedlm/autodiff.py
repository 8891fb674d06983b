"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small tape: every operation returns a :class:`Tensor` holding its
value, references to its inputs, and a closure that routes the output
gradient back to them.  ``backward()`` on a scalar root walks the graph
in reverse topological order and accumulates gradients on every node it
reaches, including the leaf tensors owned by model parameters.

Everything runs in 64-bit arithmetic so central finite differences can
verify each operation at tight tolerances.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError


class Tensor:
    """A node in the computation graph: float64 values plus optional grad."""

    __slots__ = ("values", "grad", "_parents", "_backward")

    def __init__(self, values, parents=(), backward=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable node."""
        if self.values.size != 1:
            raise DimensionError(
                f"backward() needs a scalar root, got shape {self.values.shape}"
            )
        order = _topo_order(self)
        self._accumulate(np.ones_like(self.values))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Sugar used throughout the model code.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape})"


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order so deep recurrent chains cannot overflow the stack."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def constant(values) -> Tensor:
    return Tensor(values)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.values + b.values, parents=(a, b))

    def backward(g):
        a._accumulate(_unbroadcast(g, a.values.shape))
        b._accumulate(_unbroadcast(g, b.values.shape))

    out._backward = backward
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.values - b.values, parents=(a, b))

    def backward(g):
        a._accumulate(_unbroadcast(g, a.values.shape))
        b._accumulate(-_unbroadcast(g, b.values.shape))

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.values * b.values, parents=(a, b))

    def backward(g):
        a._accumulate(_unbroadcast(g * b.values, a.values.shape))
        b._accumulate(_unbroadcast(g * a.values, b.values.shape))

    out._backward = backward
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.values, parents=(a,))

    def backward(g):
        a._accumulate(-g)

    out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` where b is a 2-d table and a has any rank with matching last axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.values.ndim != 2 or a.values.ndim < 1 or a.values.shape[-1] != b.values.shape[0]:
        raise DimensionError(
            f"matmul extents do not conform: {a.values.shape} @ {b.values.shape}"
        )
    out = Tensor(a.values @ b.values, parents=(a, b))
    k, m = b.values.shape

    def backward(g):
        a._accumulate(g @ b.values.T)
        b._accumulate(a.values.reshape(-1, k).T @ g.reshape(-1, m))

    out._backward = backward
    return out


def sum_(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.values.sum(axis=axis), parents=(a,))

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.values.shape))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.values.shape))

    out._backward = backward
    return out


def mean(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    n = a.values.size if axis is None else a.values.shape[axis]
    out = Tensor(a.values.mean(axis=axis), parents=(a,))

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g / n, a.values.shape))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g / n, axis), a.values.shape))

    out._backward = backward
    return out


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.values)
    out = Tensor(t, parents=(a,))

    def backward(g):
        a._accumulate(g * (1.0 - t * t))

    out._backward = backward
    return out


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows; both branches share it.
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid_values(a.values)
    out = Tensor(s, parents=(a,))

    def backward(g):
        a._accumulate(g * s * (1.0 - s))

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.values, 0.0), parents=(a,))

    def backward(g):
        a._accumulate(g * (a.values > 0))

    out._backward = backward
    return out


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    e = np.exp(a.values)
    out = Tensor(e, parents=(a,))

    def backward(g):
        a._accumulate(g * e)

    out._backward = backward
    return out


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.log(a.values), parents=(a,))

    def backward(g):
        a._accumulate(g / a.values)

    out._backward = backward
    return out


def square(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.values * a.values, parents=(a,))

    def backward(g):
        a._accumulate(g * 2.0 * a.values)

    out._backward = backward
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), computed without overflow."""
    a = _as_tensor(a)
    out = Tensor(np.logaddexp(0.0, a.values), parents=(a,))

    def backward(g):
        a._accumulate(g * _sigmoid_values(a.values))

    out._backward = backward
    return out


def max_(a: Tensor, axis: int) -> Tensor:
    """Maximum along one axis; ties route the gradient to the first maximum."""
    a = _as_tensor(a)
    idx = a.values.argmax(axis=axis)
    out = Tensor(a.values.max(axis=axis), parents=(a,))

    def backward(g):
        z = np.zeros_like(a.values)
        np.put_along_axis(
            z, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis
        )
        a._accumulate(z)

    out._backward = backward
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.values for p in parts], axis=axis), parents=tuple(parts))
    sizes = [p.values.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for part, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            key = [slice(None)] * g.ndim
            key[axis] = slice(start, stop)
            part._accumulate(g[tuple(key)])

    out._backward = backward
    return out


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.values.reshape(shape), parents=(a,))

    def backward(g):
        a._accumulate(g.reshape(a.values.shape))

    out._backward = backward
    return out


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.broadcast_to(a.values, shape).copy(), parents=(a,))

    def backward(g):
        a._accumulate(_unbroadcast(g, a.values.shape))

    out._backward = backward
    return out


def _is_fancy(key) -> bool:
    if isinstance(key, (np.ndarray, list)):
        return True
    if isinstance(key, tuple):
        return any(isinstance(k, (np.ndarray, list)) for k in key)
    return False


def take(a: Tensor, key) -> Tensor:
    """Basic or integer-array indexing; the backward pass scatter-adds."""
    a = _as_tensor(a)
    out = Tensor(np.array(a.values[key], dtype=np.float64), parents=(a,))
    fancy = _is_fancy(key)

    def backward(g):
        z = np.zeros_like(a.values)
        if fancy:
            np.add.at(z, key, g)
        else:
            z[key] += g
        a._accumulate(z)

    out._backward = backward
    return out


def rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a 2-d table by integer id."""
    return take(table, np.asarray(ids, dtype=np.intp))


def logsumexp(a: Tensor) -> Tensor:
    """log(sum(exp(a))) over all elements, max-shifted for stability."""
    a = _as_tensor(a)
    m = a.values.max()
    shifted = np.exp(a.values - m)
    total = shifted.sum()
    out = Tensor(m + np.log(total), parents=(a,))

    def backward(g):
        a._accumulate(g * shifted / total)

    out._backward = backward
    return out


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape 1-d tensors into a 2-d tensor, one per row."""
    return concat([reshape(p, (1, -1)) for p in parts], axis=0)
