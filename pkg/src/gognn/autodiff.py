"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Every op builds a node holding the forward value plus a closure that maps the
output gradient to contributions for each parent. backward() topologically
sorts the graph, clears stale gradients, and accumulates fresh ones, so each
optimizer step sees exactly the gradients of the current loss.
"""
from __future__ import annotations

import numpy as np


class AutodiffError(ValueError):
    pass


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- graph plumbing ----------------------------------------------------

    @staticmethod
    def _wrap(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        """Populate .grad on every requires_grad tensor reachable from this scalar."""
        if self.values.size != 1:
            raise AutodiffError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited = {id(self)}
        stack = [(self, iter(self._parents))]
        while stack:
            node, parents = stack[-1]
            for p in parents:
                if p.requires_grad and id(p) not in visited:
                    visited.add(id(p))
                    stack.append((p, iter(p._parents)))
                    break
            else:
                topo.append(node)
                stack.pop()
        for node in topo:
            node.grad = None
        self.grad = np.ones_like(self.values)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = self._wrap(other)
        out = _node(self.values + other.values, (self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))
        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _node(-self.values, (self,))
        if self.requires_grad:
            out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, other):
        other = self._wrap(other)
        out = _node(self.values * other.values, (self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.values, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.values, other.shape))
        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._wrap(other)
        out = _node(self.values / other.values, (self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.values, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * self.values / other.values**2, other.shape))
        out._backward = backward
        return out

    def __rtruediv__(self, other):
        return self._wrap(other) / self

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise AutodiffError("only constant exponents are supported")
        out = _node(self.values**exponent, (self,))
        if self.requires_grad:
            out._backward = lambda g: self._accumulate(
                g * exponent * self.values ** (exponent - 1)
            )
        return out

    def __matmul__(self, other):
        other = self._wrap(other)
        out = _node(self.values @ other.values, (self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g @ other.values.T)
            if other.requires_grad:
                other._accumulate(self.values.T @ g)
        out._backward = backward
        return out

    # -- elementwise nonlinearities ------------------------------------------

    def relu(self):
        out = _node(np.maximum(self.values, 0.0), (self,))
        if self.requires_grad:
            out._backward = lambda g: self._accumulate(g * (self.values > 0.0))
        return out

    def exp(self):
        out = _node(np.exp(self.values), (self,))
        if self.requires_grad:
            out._backward = lambda g: self._accumulate(g * out.values)
        return out

    def log(self):
        out = _node(np.log(self.values), (self,))
        if self.requires_grad:
            out._backward = lambda g: self._accumulate(g / self.values)
        return out

    def clamp_min(self, floor: float):
        out = _node(np.maximum(self.values, floor), (self,))
        if self.requires_grad:
            out._backward = lambda g: self._accumulate(g * (self.values > floor))
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = _node(self.values.sum(axis=axis, keepdims=keepdims), (self,))
        if self.requires_grad:
            def backward(g):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.shape).copy())
            out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        count = self.values.size if axis is None else self.values.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def item(self) -> float:
        if self.values.size != 1:
            raise AutodiffError("item() needs a single-element tensor")
        return float(self.values.reshape(()))


def _node(values: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(values, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
    return out


def make_node(values, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Build a custom op node; backward_fn(g) must accumulate into the parents."""
    out = _node(np.asarray(values, dtype=np.float64), parents)
    if out.requires_grad:
        out._backward = backward_fn
    return out


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def constant(values) -> Tensor:
    return Tensor(values)


def stack_rows(rows: list[Tensor]) -> Tensor:
    """Stack 1-D tensors into a matrix, one per row."""
    if not rows:
        raise AutodiffError("stack_rows needs at least one row")
    out = _node(np.stack([r.values for r in rows]), tuple(rows))

    def backward(g):
        for i, r in enumerate(rows):
            if r.requires_grad:
                r._accumulate(g[i])
    out._backward = backward
    return out


def take_rows(t: Tensor, indices) -> Tensor:
    """Gather rows by index; duplicate indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    out = _node(t.values[idx], (t,))
    if t.requires_grad:
        def backward(g):
            contrib = np.zeros_like(t.values)
            np.add.at(contrib, idx, g)
            t._accumulate(contrib)
        out._backward = backward
    return out


def take_per_row(t: Tensor, columns) -> Tensor:
    """values[i, columns[i]] for each row i of a 2-D tensor."""
    cols = np.asarray(columns, dtype=np.int64)
    rows = np.arange(t.shape[0])
    out = _node(t.values[rows, cols], (t,))
    if t.requires_grad:
        def backward(g):
            contrib = np.zeros_like(t.values)
            np.add.at(contrib, (rows, cols), g)
            t._accumulate(contrib)
        out._backward = backward
    return out


def const_matmul(matrix, t: Tensor) -> Tensor:
    """matrix @ t for a constant (dense or scipy sparse) left operand."""
    out = _node(matrix @ t.values, (t,))
    if t.requires_grad:
        mt = matrix.T
        out._backward = lambda g: t._accumulate(np.asarray(mt @ g))
    return out


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    z = t.values - t.values.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    out = _node(p, (t,))
    if t.requires_grad:
        def backward(g):
            t._accumulate(p * (g - (g * p).sum(axis=axis, keepdims=True)))
        out._backward = backward
    return out


def l2norm_rows(t: Tensor) -> Tensor:
    """Euclidean norm of each row; exact-zero rows get zero gradient."""
    norms = np.sqrt((t.values**2).sum(axis=-1))
    out = _node(norms, (t,))
    if t.requires_grad:
        def backward(g):
            safe = np.where(norms > 0.0, norms, 1.0)
            t._accumulate((g * (norms > 0.0) / safe)[..., None] * t.values)
        out._backward = backward
    return out
