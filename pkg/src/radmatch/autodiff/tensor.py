"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A Tensor records the op that produced it; ``backward()`` on a scalar walks
the graph in reverse topological order and accumulates gradients into every
requires-grad ancestor (sum rule for reused sub-expressions). Graph
recording is skipped entirely when no input requires a gradient or inside
``no_grad()``, so the same code paths serve training and inference.
"""
from __future__ import annotations

import numpy as np

from ..errors import ContractError

_GRAD_ENABLED = [True]


class no_grad:
    """Context manager disabling graph recording."""

    def __enter__(self):
        _GRAD_ENABLED.append(False)
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED.pop()
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    # -- bookkeeping

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph construction

    @staticmethod
    def _lift(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    @staticmethod
    def _result(data, parents, backward_fn) -> "Tensor":
        track = grad_enabled() and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=track)
        if track:
            out._parents = parents
            out._backward_fn = backward_fn
        return out

    def _accumulate(self, g: np.ndarray) -> None:
        if self.requires_grad:
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- arithmetic primitives

    def __add__(self, other):
        a, b = self, Tensor._lift(other)

        def bwd(g):
            a._accumulate(_unbroadcast(g, a.shape))
            b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._result(a.data + b.data, (a, b), bwd)

    __radd__ = __add__

    def __mul__(self, other):
        a, b = self, Tensor._lift(other)

        def bwd(g):
            a._accumulate(_unbroadcast(g * b.data, a.shape))
            b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor._result(a.data * b.data, (a, b), bwd)

    __rmul__ = __mul__

    def __sub__(self, other):
        a, b = self, Tensor._lift(other)

        def bwd(g):
            a._accumulate(_unbroadcast(g, a.shape))
            b._accumulate(_unbroadcast(-g, b.shape))

        return Tensor._result(a.data - b.data, (a, b), bwd)

    def __rsub__(self, other):
        return Tensor._lift(other).__sub__(self)

    def __truediv__(self, other):
        a, b = self, Tensor._lift(other)

        def bwd(g):
            a._accumulate(_unbroadcast(g / b.data, a.shape))
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._result(a.data / b.data, (a, b), bwd)

    def __rtruediv__(self, other):
        return Tensor._lift(other).__truediv__(self)

    def __neg__(self):
        a = self

        def bwd(g):
            a._accumulate(-g)

        return Tensor._result(-a.data, (a,), bwd)

    def __pow__(self, exponent: float):
        if not isinstance(exponent, (int, float)):
            raise ContractError("pow supports scalar exponents only")
        a = self

        def bwd(g):
            a._accumulate(g * exponent * a.data ** (exponent - 1))

        return Tensor._result(a.data ** exponent, (a,), bwd)

    def __matmul__(self, other):
        a, b = self, Tensor._lift(other)
        if a.ndim != 2 or b.ndim != 2:
            raise ContractError(f"matmul needs 2D tensors, got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ContractError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

        def bwd(g):
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)

        return Tensor._result(a.data @ b.data, (a, b), bwd)

    # -- reductions and reshapes

    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def bwd(g):
            if axis is None:
                a._accumulate(np.full(a.shape, float(g)))
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gg, a.shape).copy())

        return Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.size
        else:
            n = self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def bwd(g):
            a._accumulate(g.reshape(a.shape))

        return Tensor._result(a.data.reshape(shape), (a,), bwd)

    @property
    def T(self):
        a = self
        if a.ndim != 2:
            raise ContractError("T is defined for 2D tensors")

        def bwd(g):
            a._accumulate(g.T)

        return Tensor._result(a.data.T.copy(), (a,), bwd)

    def narrow(self, axis: int, start: int, length: int):
        """Contiguous slice along one axis."""
        a = self
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, start + length)
        idx = tuple(idx)

        def bwd(g):
            if a.requires_grad:
                buf = np.zeros_like(a.data)
                buf[idx] = g
                a._accumulate(buf)

        return Tensor._result(a.data[idx].copy(), (a,), bwd)

    # -- elementwise nonlinearities

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def bwd(g):
            a._accumulate(g * out_data)

        return Tensor._result(out_data, (a,), bwd)

    def log(self):
        a = self

        def bwd(g):
            a._accumulate(g / a.data)

        return Tensor._result(np.log(a.data), (a,), bwd)

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)

        def bwd(g):
            # safe at 0: true derivative is unbounded, clamp the denominator
            a._accumulate(g * 0.5 / np.maximum(out_data, 1e-150))

        return Tensor._result(out_data, (a,), bwd)

    def relu(self):
        a = self
        mask = a.data > 0

        def bwd(g):
            a._accumulate(g * mask)

        # np.maximum (not where) so NaN propagates instead of masking to 0
        return Tensor._result(np.maximum(a.data, 0.0), (a,), bwd)

    def sigmoid(self):
        a = self
        out_data = np.where(a.data >= 0,
                            1.0 / (1.0 + np.exp(-np.abs(a.data))),
                            np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

        def bwd(g):
            a._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._result(out_data, (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    parts = [Tensor._lift(t) for t in tensors]
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, start, size in zip(parts, offsets[:-1], sizes):
            if p.requires_grad:
                idx = [slice(None)] * p.ndim
                idx[axis] = slice(start, start + size)
                p._accumulate(g[tuple(idx)])

    return Tensor._result(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilised softmax (exact gradient: the shift is constant)."""
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    s = (x - shift).exp().sum(axis=axis, keepdims=True).log() + shift
    if not keepdims:
        out_shape = list(x.shape)
        out_shape.pop(axis if axis >= 0 else x.ndim + axis)
        return s.reshape(tuple(out_shape))
    return s
