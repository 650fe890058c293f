"""Reverse-mode automatic differentiation over numpy arrays.

Small tape-based engine: enough ops for transformer encoders, MLP heads,
and the frame-wise distillation loss. Reductions accumulate in float64
regardless of the storage dtype.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf as _np_erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to a broadcast operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    """An array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- bookkeeping --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def _accum(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=self.data.dtype)
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        """Backpropagate from this node (seeded with ones)."""
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
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        out = _node(self.data + other.data, (self, other))

        def bw(g):
            if self.requires_grad:
                self._accum(_reduce_to(g, self.shape))
            if other.requires_grad:
                other._accum(_reduce_to(g, other.shape))

        out._backward = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _node(-self.data, (self,))
        out._backward = lambda g: self._accum(-g) if self.requires_grad else None
        return out

    def __sub__(self, other):
        return self + (-_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        out = _node(self.data * other.data, (self, other))

        def bw(g):
            if self.requires_grad:
                self._accum(_reduce_to(g * other.data, self.shape))
            if other.requires_grad:
                other._accum(_reduce_to(g * self.data, other.shape))

        out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other, self.dtype)
        out = _node(self.data / other.data, (self, other))

        def bw(g):
            if self.requires_grad:
                self._accum(_reduce_to(g / other.data, self.shape))
            if other.requires_grad:
                other._accum(_reduce_to(-g * self.data / other.data**2, other.shape))

        out._backward = bw
        return out

    def __rtruediv__(self, other):
        return _as_tensor(other, self.dtype) / self

    def __matmul__(self, other):
        other = _as_tensor(other, self.dtype)
        out = _node(self.data @ other.data, (self, other))

        def bw(g):
            if self.requires_grad:
                self._accum(_reduce_to(g @ np.swapaxes(other.data, -1, -2), self.shape))
            if other.requires_grad:
                other._accum(_reduce_to(np.swapaxes(self.data, -1, -2) @ g, other.shape))

        out._backward = bw
        return out

    def __pow__(self, exponent: float):
        out = _node(self.data**exponent, (self,))

        def bw(g):
            if self.requires_grad:
                self._accum(g * exponent * self.data ** (exponent - 1))

        out._backward = bw
        return out

    def __getitem__(self, key):
        out = _node(self.data[key], (self,))

        def bw(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, key, g)
                self._accum(full)

        out._backward = bw
        return out

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        orig = self.shape
        out = _node(self.data.reshape(*shape), (self,))
        out._backward = lambda g: self._accum(g.reshape(orig)) if self.requires_grad else None
        return out

    def transpose(self, axes):
        inverse = np.argsort(axes)
        out = _node(self.data.transpose(axes), (self,))
        out._backward = lambda g: self._accum(g.transpose(inverse)) if self.requires_grad else None
        return out

    def swapaxes(self, a: int, b: int):
        out = _node(self.data.swapaxes(a, b), (self,))
        out._backward = lambda g: self._accum(g.swapaxes(a, b)) if self.requires_grad else None
        return out

    # -- reductions and elementwise functions -------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(self.dtype)
        out = _node(out_data, (self,))

        def bw(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accum(np.broadcast_to(g, self.shape))
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.shape))

        out._backward = bw
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def exp(self):
        out = _node(np.exp(self.data), (self,))
        out._backward = lambda g: self._accum(g * out.data) if self.requires_grad else None
        return out

    def log(self):
        out = _node(np.log(self.data), (self,))
        out._backward = lambda g: self._accum(g / self.data) if self.requires_grad else None
        return out

    def sqrt(self):
        return self**0.5

    def erf(self):
        out = _node(_np_erf(self.data).astype(self.dtype, copy=False), (self,))

        def bw(g):
            if self.requires_grad:
                self._accum(g * _TWO_OVER_SQRT_PI * np.exp(-self.data**2))

        out._backward = bw
        return out


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None and arr.dtype != dtype and np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(dtype)
    elif dtype is not None and arr.dtype.kind in "iu":
        arr = arr.astype(dtype)
    return Tensor(arr)


def _node(data: np.ndarray, parents: tuple) -> Tensor:
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
    return out


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    out = _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accum(g[tuple(idx)])

    out._backward = bw
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; the max shift is detached (softmax is
    shift-invariant so the gradient is unaffected)."""
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def gelu_t(x: Tensor) -> Tensor:
    """Exact GELU on graph tensors: x * Phi(x)."""
    return x * 0.5 * ((x * _INV_SQRT2).erf() + 1.0)


def gelu(x):
    """Exact GELU, x * Phi(x), for plain arrays or scalars."""
    arr = np.asarray(x, dtype=np.float64)
    out = arr * 0.5 * (1.0 + _np_erf(arr * _INV_SQRT2))
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out
