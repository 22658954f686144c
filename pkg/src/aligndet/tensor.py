"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Every tensor stores float64 data in row-major order. Differentiable
operations record a backward closure; calling ``backward()`` on a scalar
loss walks the recorded graph once in reverse topological order and
accumulates gradients into every reachable tensor that requires them.
The graph is freed after the walk (retained graphs are not supported).
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over the axes numpy broadcasting introduced to reach `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    # ------------------------------------------------------------------
    # graph plumbing

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss; frees the graph afterwards."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in order:
            if not node.requires_grad:
                node.grad = None
            node._backward = None
            node._parents = ()

    # ------------------------------------------------------------------
    # operation helpers

    @staticmethod
    def _lift(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad or p._parents for p in parents):
            out._parents = tuple(parents)
            out._backward = backward
            # intermediates carry gradient during the sweep regardless of leaves
            out.requires_grad = True
        return out

    # ------------------------------------------------------------------
    # arithmetic

    def __add__(self, other):
        a, b = self, self._lift(other)
        data = a.data + b.data

        def backward(g):
            a._accumulate(_unbroadcast(g, a.shape))
            b._accumulate(_unbroadcast(g, b.shape))

        return self._make(data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(g):
            a._accumulate(-g)

        return self._make(-a.data, (a,), backward)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        a, b = self, self._lift(other)
        data = a.data * b.data

        def backward(g):
            a._accumulate(_unbroadcast(g * b.data, a.shape))
            b._accumulate(_unbroadcast(g * a.data, b.shape))

        return self._make(data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, self._lift(other)
        data = a.data / b.data

        def backward(g):
            a._accumulate(_unbroadcast(g / b.data, a.shape))
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return self._make(data, (a, b), backward)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, exponent: float):
        a = self
        data = a.data ** exponent

        def backward(g):
            a._accumulate(g * exponent * a.data ** (exponent - 1))

        return self._make(data, (a,), backward)

    def __matmul__(self, other):
        a, b = self, self._lift(other)
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(
                f"matmul requires >=2-D operands, got {a.shape} and {b.shape}"
            )
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
        data = np.matmul(a.data, b.data)

        def backward(g):
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            a._accumulate(_unbroadcast(ga, a.shape))
            b._accumulate(_unbroadcast(gb, b.shape))

        return self._make(data, (a, b), backward)

    # ------------------------------------------------------------------
    # elementwise nonlinearities

    def exp(self):
        a = self
        data = np.exp(a.data)

        def backward(g):
            a._accumulate(g * data)

        return self._make(data, (a,), backward)

    def log(self):
        a = self

        def backward(g):
            a._accumulate(g / a.data)

        return self._make(np.log(a.data), (a,), backward)

    def sqrt(self):
        a = self
        data = np.sqrt(a.data)

        def backward(g):
            a._accumulate(g * 0.5 / data)

        return self._make(data, (a,), backward)

    def sin(self):
        a = self

        def backward(g):
            a._accumulate(g * np.cos(a.data))

        return self._make(np.sin(a.data), (a,), backward)

    def cos(self):
        a = self

        def backward(g):
            a._accumulate(-g * np.sin(a.data))

        return self._make(np.cos(a.data), (a,), backward)

    def relu(self):
        a = self
        mask = a.data > 0

        def backward(g):
            a._accumulate(g * mask)

        return self._make(a.data * mask, (a,), backward)

    def sigmoid(self):
        a = self
        data = expit(a.data)  # overflow-safe logistic

        def backward(g):
            a._accumulate(g * data * (1.0 - data))

        return self._make(data, (a,), backward)

    def maximum(self, other):
        a, b = self, self._lift(other)
        mask = a.data >= b.data
        data = np.where(mask, a.data, b.data)

        def backward(g):
            a._accumulate(_unbroadcast(g * mask, a.shape))
            b._accumulate(_unbroadcast(g * ~mask, b.shape))

        return self._make(data, (a, b), backward)

    def minimum(self, other):
        a, b = self, self._lift(other)
        mask = a.data <= b.data
        data = np.where(mask, a.data, b.data)

        def backward(g):
            a._accumulate(_unbroadcast(g * mask, a.shape))
            b._accumulate(_unbroadcast(g * ~mask, b.shape))

        return self._make(data, (a, b), backward)

    # ------------------------------------------------------------------
    # reductions and reshaping

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                grad = np.broadcast_to(g, a.shape)
            else:
                if not keepdims:
                    g = np.expand_dims(g, axis)
                grad = np.broadcast_to(g, a.shape)
            a._accumulate(np.ascontiguousarray(grad))

        return self._make(data, (a,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / count

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self

        def backward(g):
            a._accumulate(g.reshape(a.shape))

        return self._make(a.data.reshape(shape), (a,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inverse = np.argsort(axes)

        def backward(g):
            a._accumulate(g.transpose(inverse))

        return self._make(a.data.transpose(axes), (a,), backward)

    def __getitem__(self, index):
        a = self
        data = a.data[index]

        def backward(g):
            grad = np.zeros_like(a.data)
            np.add.at(grad, index, g)
            a._accumulate(grad)

        return self._make(data, (a,), backward)

    def pad2d(self, pad: int):
        """Zero-pad the last two axes by `pad` on each side."""
        if pad == 0:
            return self
        a = self
        width = [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)]
        data = np.pad(a.data, width)
        inner = (Ellipsis, slice(pad, -pad), slice(pad, -pad))

        def backward(g):
            a._accumulate(g[inner])

        return self._make(data, (a,), backward)


# ----------------------------------------------------------------------
# free functions


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    extents = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + extents)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    return Tensor._make(data, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis=axis)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along `axis`; rows sum to 1."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        x._accumulate(data * (g - inner))

    return Tensor._make(data, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - logsum

    def backward(g):
        x._accumulate(g - np.exp(data) * g.sum(axis=axis, keepdims=True))

    return Tensor._make(data, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1,
               eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization along `axis`, then affine."""
    extent = x.shape[axis]
    if gamma.shape != (extent,) or beta.shape != (extent,):
        raise ShapeError(
            f"layer_norm affine shape {gamma.shape}/{beta.shape} does not match "
            f"normalized extent {extent}"
        )
    mu = x.mean(axis=axis, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    normed = centered / (var + eps).sqrt()
    return normed * gamma + beta


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor._lift(a) @ b


def sigmoid(x: Tensor) -> Tensor:
    return Tensor._lift(x).sigmoid()


def global_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most `max_norm`."""
    params = list(params)
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm
