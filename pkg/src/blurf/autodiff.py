"""Tape-style reverse-mode automatic differentiation over numpy arrays.

Nodes are tensor-granular: every :class:`Tensor` wraps an ndarray together
with the closure that maps its output gradient to gradients of its parents.
Only nodes that (transitively) depend on a leaf with ``requires_grad`` keep
their parents, so constant subgraphs cost nothing on the backward pass.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording parents (inference / rendering)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value)
    if arr.dtype.kind in "biu":
        arr = arr.astype(np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __array_priority__ = 100
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = _as_array(value)
        self.grad: np.ndarray | None = None
        self.parents: tuple = ()
        self.backward_fn: Callable | None = None
        self.requires_grad = requires_grad
        self.name = name

    # -- bookkeeping ---------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.value)

    # -- operators -----------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x)


def _make(value, parents: Sequence, backward_fn: Callable) -> Tensor:
    """Create an op output; record the graph only when a parent needs grad."""
    out = Tensor(value)
    if _GRAD_ENABLED:
        live = tuple(p for p in parents if isinstance(p, Tensor) and p.requires_grad)
        if live:
            out.parents = tuple(parents)
            out.backward_fn = backward_fn
            out.requires_grad = True
    return out


# -- elementwise binary ------------------------------------------------------
def _raw(x):
    """Underlying value; python scalars stay weakly typed so float32 survives."""
    if isinstance(x, Tensor):
        return x.value
    if isinstance(x, (int, float)):
        return float(x)
    return _as_array(x)


def _shape(x) -> tuple:
    return x.shape if isinstance(x, Tensor) else np.shape(x)


def _binary(a, b, out, grad_a, grad_b) -> Tensor:
    parents = tuple(x for x in (a, b) if isinstance(x, Tensor))
    sa, sb = _shape(a), _shape(b)

    def back(g):
        grads = []
        if isinstance(a, Tensor):
            grads.append(_unbroadcast(grad_a(g), sa))
        if isinstance(b, Tensor):
            grads.append(_unbroadcast(grad_b(g), sb))
        return tuple(grads)

    return _make(out, parents, back)


def add(a, b) -> Tensor:
    return _binary(a, b, _raw(a) + _raw(b), lambda g: g, lambda g: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, _raw(a) - _raw(b), lambda g: g, lambda g: -g)


def mul(a, b) -> Tensor:
    av, bv = _raw(a), _raw(b)
    return _binary(a, b, av * bv, lambda g: g * bv, lambda g: g * av)


def div(a, b) -> Tensor:
    av, bv = _raw(a), _raw(b)
    out = av / bv
    return _binary(a, b, out, lambda g: g / bv, lambda g: -g * out / bv)


def where(cond, a, b) -> Tensor:
    """Select elementwise; ``cond`` is a constant boolean mask."""
    cond = np.asarray(value_of(cond), dtype=bool)
    out = np.where(cond, _raw(a), _raw(b))
    return _binary(a, b, out, lambda g: np.where(cond, g, 0.0),
                   lambda g: np.where(cond, 0.0, g))


# -- elementwise unary -------------------------------------------------------
def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(av ** p, (a,), lambda g: (g * p * av ** (p - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(av * av, (a,), lambda g: (2.0 * g * av,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.log(av), (a,), lambda g: (g / av,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.sin(av), (a,), lambda g: (g * np.cos(av),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.abs(av), (a,), lambda g: (g * np.sign(av),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.maximum(av, 0.0), (a,), lambda g: (g * (av > 0),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(av))
    out = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(av.dtype, copy=False)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    out = np.logaddexp(0.0, av).astype(av.dtype, copy=False)

    def back(g):
        e = np.exp(-np.abs(av))
        s = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return (g * s,)

    return _make(out, (a,), back)


def cast(a, dtype) -> Tensor:
    """Change precision; the gradient is cast back to the input's dtype."""
    a = as_tensor(a)
    dtype = np.dtype(dtype)
    if a.dtype == dtype:
        return a
    src = a.dtype
    return _make(a.value.astype(dtype), (a,), lambda g: (g.astype(src),))


def detach(a) -> Tensor:
    return Tensor(value_of(a))


# -- reductions --------------------------------------------------------------
def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)
    return _make(out, (a,), lambda g: (_expand_reduced(g, shape, axis, keepdims).copy(),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.value.mean(axis=axis, keepdims=keepdims)
    count = a.value.size / max(out.size, 1)
    return _make(out, (a,),
                 lambda g: (_expand_reduced(g / count, shape, axis, keepdims).copy(),))


def cumsum(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    out = np.cumsum(a.value, axis=axis)

    def back(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(out, (a,), back)


def take_along_axis(a, idx: np.ndarray, axis: int) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = np.take_along_axis(a.value, idx, axis=axis)

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        idx_b = np.broadcast_to(idx, g.shape)
        grid = list(np.indices(g.shape, sparse=True))
        grid[axis % len(shape)] = idx_b
        np.add.at(full, tuple(grid), g)
        return (full,)

    return _make(out, (a,), back)


def min_(a, axis: int) -> Tensor:
    """Minimum along ``axis``; gradient flows to the first minimising index."""
    a = as_tensor(a)
    idx = np.expand_dims(np.argmin(a.value, axis=axis), axis)
    return squeeze(take_along_axis(a, idx, axis), axis)


def max_(a, axis: int) -> Tensor:
    """Maximum along ``axis``; gradient flows to the first maximising index."""
    a = as_tensor(a)
    idx = np.expand_dims(np.argmax(a.value, axis=axis), axis)
    return squeeze(take_along_axis(a, idx, axis), axis)


# -- shape manipulation --------------------------------------------------------
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def squeeze(a, axis: int) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(np.squeeze(a.value, axis), (a,), lambda g: (g.reshape(old),))


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(np.expand_dims(a.value, axis), (a,), lambda g: (g.reshape(old),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(np.broadcast_to(a.value, shape), (a,), lambda g: (_unbroadcast(g, old),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.value, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape, dtype = a.shape, a.dtype
    if isinstance(idx, Tensor):
        idx = idx.value
    out = a.value[idx]

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), back)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    values = [t.value for t in tensors]
    out = np.concatenate(values, axis=axis)
    splits = np.cumsum([v.shape[axis] for v in values])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tensors, back)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.value for t in tensors], axis=axis)

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(out, tensors, back)


# -- linear algebra ----------------------------------------------------------
def matmul(a, b) -> Tensor:
    """``a @ b`` for operands with ndim >= 2 (batch dims broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul operands need ndim >= 2; reshape vectors first")

    def back(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _make(av @ bv, (a, b), back)


# -- backward pass -------------------------------------------------------------
def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if isinstance(p, Tensor) and p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(root: Tensor, retain_graph: bool = False) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Interior nodes drop their parents and closures as they are consumed so the
    step's graph is freed; pass ``retain_graph=True`` to backpropagate twice.
    """
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(_topological(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not (isinstance(parent, Tensor) and parent.requires_grad):
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=parent.value.dtype)
        if not retain_graph:
            node.parents, node.backward_fn, node.requires_grad = (), None, False


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.value)


class Parameter(Tensor):
    """Trainable leaf tagged with an optimiser group (mlp / camera / dct_basis)."""

    __slots__ = ("group",)

    def __init__(self, value, group: str = "mlp", name: str | None = None):
        super().__init__(np.array(_as_array(value), copy=True), requires_grad=True, name=name)
        self.group = group


GROUP_LEARNING_RATES = {"mlp": 5e-4, "camera": 1e-3, "dct_basis": 1.25e-4}
