"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray and records the operations that produced it.
Calling ``backward()`` on a scalar result walks the tape in reverse
topological order and accumulates gradients into every Tensor created
with ``requires_grad=True``.  Gradient evaluation walks the tape in a
single thread; any parallelism lives inside numpy's own kernels.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import DimensionError

__all__ = [
    "Tensor",
    "as_tensor",
    "add",
    "mul",
    "matmul",
    "conv2d",
    "softmax",
    "relu",
    "leaky_relu",
    "log",
    "exp",
    "xlogy",
    "tsum",
    "reshape",
    "transpose",
]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


class Tensor:
    """An ndarray plus the tape bookkeeping needed for backward()."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- autograd ------------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if not (self.requires_grad or self._parents):
            return  # constant leaf: gradient is never read
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad leaf."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    "backward() without an explicit gradient needs a scalar; "
                    f"got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in np.atleast_1d(axis)]
        )
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents
        out._backward = backward
    return out


# -- arithmetic --------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    out_data = a.data**exponent

    def backward(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1.0))

    return _make(out_data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _make(out_data, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), backward)


def xlogy(a, b) -> Tensor:
    """Entrywise ``a * log(b)`` with the convention 0 * log(anything) = 0.

    Entries where a == 0 contribute neither value nor gradient; this is the
    right call for structural zeros (a is zero identically, not incidentally),
    which is how KL terms over hard beliefs stay finite.
    """
    a, b = as_tensor(a), as_tensor(b)
    zero = a.data == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        logb = np.log(np.where(zero, 1.0, b.data))
        out_data = np.where(zero, 0.0, a.data * logb)
        ratio = np.where(zero, 0.0, a.data / b.data)

    def backward(g):
        a._accumulate(_unbroadcast(g * logb, a.shape))
        b._accumulate(_unbroadcast(g * ratio, b.shape))

    return _make(out_data, (a, b), backward)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(out_data, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _make(out_data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out_data = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(g.transpose(inverse))

    return _make(out_data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _make(out_data, (a, b), backward)


# -- nonlinearities ----------------------------------------------------


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # subgradient at 0 is 0
    out_data = np.where(mask, a.data, 0.0)

    def backward(g):
        a._accumulate(g * mask)

    return _make(out_data, (a,), backward)


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out_data = np.where(mask, a.data, slope * a.data)

    def backward(g):
        a._accumulate(g * np.where(mask, 1.0, slope))

    return _make(out_data, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    """Row-stochastic softmax along `axis`; the max shift is not differentiated."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        a._accumulate(out_data * (g - inner))

    return _make(out_data, (a,), backward)


# -- convolution -------------------------------------------------------


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    """Return (cols, out_h, out_w): cols is (N, out_h*out_w, C*k*k) with the
    last axis ordered (channel, kernel row, kernel col)."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, out_h * out_w, c * k * k)
    return np.ascontiguousarray(cols), out_h, out_w


def _col2im(dcols: np.ndarray, x_shape, k: int, stride: int, padding: int) -> np.ndarray:
    """Scatter-add column gradients back onto the (padded) input."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    out_h = (hp - k) // stride + 1
    out_w = (wp - k) // stride + 1
    dxp = np.zeros((n, c, hp, wp), dtype=dcols.dtype)
    d6 = dcols.reshape(n, out_h, out_w, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for ky in range(k):
        for kx in range(k):
            dxp[:, :, ky : ky + out_h * stride : stride, kx : kx + out_w * stride : stride] += d6[
                :, :, :, :, ky, kx
            ]
    if padding:
        return dxp[:, :, padding:-padding, padding:-padding]
    return dxp


def conv2d(x, weight, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation.

    x: (N, C_in, H, W) or (C_in, H, W); weight: (C_out, C_in, k, k).
    Square kernels and equal stride/padding on both axes.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d got input {x.shape}, weight {weight.shape}")
    c_out, c_in, k, k2 = weight.shape
    if k != k2:
        raise DimensionError(f"conv2d needs square kernels, got {weight.shape}")
    if xd.shape[1] != c_in:
        raise DimensionError(
            f"conv2d channel mismatch: input has {xd.shape[1]}, weight expects {c_in}"
        )
    if xd.shape[2] + 2 * padding < k or xd.shape[3] + 2 * padding < k:
        raise DimensionError(
            f"conv2d kernel {k}x{k} exceeds padded input {xd.shape[2:]} + 2*{padding}"
        )
    n = xd.shape[0]
    cols, out_h, out_w = _im2col(xd, k, stride, padding)
    wm = weight.data.reshape(c_out, c_in * k * k)
    out = (cols @ wm.T).transpose(0, 2, 1).reshape(n, c_out, out_h, out_w)
    if squeeze:
        out = out[0]

    def backward(g):
        gm = g[None] if squeeze else g
        gm = gm.reshape(n, c_out, out_h * out_w).transpose(0, 2, 1)  # (N, P, C_out)
        dw = np.tensordot(gm, cols, axes=([0, 1], [0, 1])).reshape(weight.shape)
        weight._accumulate(dw)
        dcols = gm @ wm
        dx = _col2im(dcols, xd.shape, k, stride, padding)
        x._accumulate(dx[0] if squeeze else dx)

    return _make(out, (x, weight), backward)
