"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is a tape of closures: each operation whose inputs require
gradients records a backward closure over its parents, and ``backward()`` on
a scalar walks the tape in reverse topological order. Everything is 64-bit.
Any operation that produces a NaN or Inf raises ``NonFiniteError`` at the
point of creation instead of letting the value propagate.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from forestbench.errors import NonFiniteError, ShapeError

Array = np.ndarray


def _check_finite(data: Array, op: str) -> Array:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    return data


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense float64 array plus an optional tape entry for gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, _op: str = "tensor"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and min(arr.shape) == 0:
            raise ShapeError(f"empty extent in shape {arr.shape}")
        self.data: Array = _check_finite(arr, _op)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar, accumulating into `.grad`."""
        if self.shape != ():
            raise ShapeError(f"backward requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.array(1.0)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        o = coerce(other)
        out = fused_op(self.data + o.data, (self, o), None, "add")
        if out.requires_grad:

            def backward(g: Array) -> None:
                accumulate_grad(self, _unbroadcast(g, self.shape))
                accumulate_grad(o, _unbroadcast(g, o.shape))

            out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = fused_op(-self.data, (self,), None, "neg")
        if out.requires_grad:
            out._backward = lambda g: accumulate_grad(self, -g)
        return out

    def __sub__(self, other):
        return self + (-coerce(other))

    def __rsub__(self, other):
        return coerce(other) + (-self)

    def __mul__(self, other):
        o = coerce(other)
        out = fused_op(self.data * o.data, (self, o), None, "mul")
        if out.requires_grad:

            def backward(g: Array) -> None:
                accumulate_grad(self, _unbroadcast(g * o.data, self.shape))
                accumulate_grad(o, _unbroadcast(g * self.data, o.shape))

            out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = coerce(other)
        out = fused_op(self.data / o.data, (self, o), None, "div")
        if out.requires_grad:

            def backward(g: Array) -> None:
                accumulate_grad(self, _unbroadcast(g / o.data, self.shape))
                accumulate_grad(o, _unbroadcast(-g * self.data / (o.data * o.data), o.shape))

            out._backward = backward
        return out

    def __rtruediv__(self, other):
        return coerce(other) / self

    def __matmul__(self, other):
        return matmul(self, other)

    # -- structure -----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        out = fused_op(self.data.reshape(shape), (self,), None, "reshape")
        if out.requires_grad:
            out._backward = lambda g: accumulate_grad(self, g.reshape(orig))
        return out

    def transpose(self, axes: Sequence[int]):
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        out = fused_op(np.transpose(self.data, axes), (self,), None, "transpose")
        if out.requires_grad:
            out._backward = lambda g: accumulate_grad(self, np.transpose(g, inv))
        return out

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(axes)

    def broadcast_to(self, shape):
        shape = tuple(shape)
        out = fused_op(np.broadcast_to(self.data, shape), (self,), None, "broadcast_to")
        if out.requires_grad:
            out._backward = lambda g: accumulate_grad(self, _unbroadcast(g, self.shape))
        return out

    def __getitem__(self, key):
        out = fused_op(self.data[key], (self,), None, "getitem")
        if out.requires_grad:

            def backward(g: Array) -> None:
                buf = np.zeros_like(self.data)
                np.add.at(buf, key, g)
                accumulate_grad(self, buf)

            out._backward = backward
        return out

    # -- reductions and elementwise -------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = fused_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), None, "sum")
        if out.requires_grad:
            in_shape = self.shape

            def backward(g: Array) -> None:
                gg = g
                if axis is not None and not keepdims:
                    ax = (axis,) if isinstance(axis, int) else tuple(axis)
                    ax = tuple(a % len(in_shape) for a in ax)
                    gg = np.expand_dims(gg, ax)
                accumulate_grad(self, np.broadcast_to(gg, in_shape))

            out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.size
        else:
            ax = (axis,) if isinstance(axis, int) else tuple(axis)
            n = 1
            for a in ax:
                n *= self.shape[a % self.ndim]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def sqrt(self):
        out = fused_op(np.sqrt(self.data), (self,), None, "sqrt")
        if out.requires_grad:
            out._backward = lambda g: accumulate_grad(self, g * 0.5 / out.data)
        return out


def coerce(x) -> Tensor:
    """Wrap scalars/arrays as constant tensors; pass tensors through."""
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def fused_op(
    data: Array,
    parents: tuple[Tensor, ...],
    backward: Callable[[Array], None] | None,
    op: str,
) -> Tensor:
    """Construct an op result, wiring it into the tape when needed.

    Fused operations (softmax, attention internals, losses) use this to attach
    a hand-written backward closure; the finiteness contract is enforced on
    the stored result, so internal +/-inf scratch values never escape.
    """
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), _op=op)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def accumulate_grad(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with broadcasting of leading extents."""
    a = coerce(a)
    b = coerce(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = fused_op(np.matmul(a.data, b.data), (a, b), None, "matmul")
    if out.requires_grad:

        def backward(g: Array) -> None:
            accumulate_grad(a, _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape))
            accumulate_grad(b, _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape))

        out._backward = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along `axis`; gradients split back by extent."""
    ts = [coerce(t) for t in tensors]
    out = fused_op(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), None, "concat")
    if out.requires_grad:
        sizes = [t.shape[axis] for t in ts]

        def backward(g: Array) -> None:
            offset = 0
            for t, s in zip(ts, sizes):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + s)
                accumulate_grad(t, g[tuple(idx)])
                offset += s

        out._backward = backward
    return out
