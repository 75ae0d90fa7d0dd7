"""Dense float64 tensors with reverse-mode differentiation.

Every op takes :class:`Tensor` arguments, computes its forward value with
numpy and records a closure that pushes the output gradient back to its
parents. Leading batch axes broadcast the numpy way throughout, so the
same blocks run on one sample ``[L, D]`` or a batch ``[B, L, D]``.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LN_EPS = 1e-5


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an op."""


class AxisError(ShapeError):
    pass


class _OpCounter:
    def __init__(self) -> None:
        self.count = 0
        self.by_name: dict[str, int] = {}


_counters: list[_OpCounter] = []


@contextlib.contextmanager
def count_ops() -> Iterator[_OpCounter]:
    """Count the ops recorded inside the block (used to compare forward graphs)."""
    counter = _OpCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None, op: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


def _make(data: np.ndarray, parents: tuple, backward_fn: Callable[[np.ndarray], None], op: str) -> Tensor:
    for c in _counters:
        c.count += 1
        c.by_name[op] = c.by_name.get(op, 0) + 1
    requires = any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, opname: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _norm_axis(axis: int, ndim: int, opname: str) -> int:
    if not -ndim <= axis < ndim:
        raise AxisError(f"{opname}: axis {axis} is invalid for a tensor of rank {ndim}")
    return axis % ndim


# -- elementwise ------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), bw, "scale")


def elementwise(x: Tensor, y: Tensor, kind: str) -> Tensor:
    if kind == "add":
        return add(x, y)
    if kind == "mul":
        return mul(x, y)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        _accum(x, g * mask)

    return _make(x.data * mask, (x,), bw, "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def bw(g):
        _accum(x, g * (1.0 - y * y))

    return _make(y, (x,), bw, "tanh")


def unary(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown unary kind {kind!r}")


# -- reductions -------------------------------------------------------------


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    if axis is not None:
        axis = _norm_axis(axis, x.ndim, "sum")
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))

    return _make(out, (x,), bw, "sum")


def reduce_mean(x: Tensor, axis: int) -> Tensor:
    axis = _norm_axis(axis, x.ndim, "reduce_mean")
    n = x.shape[axis]
    out = x.data.sum(axis=axis) / n

    def bw(g):
        _accum(x, np.broadcast_to(np.expand_dims(g, axis) / n, x.shape))

    return _make(out, (x,), bw, "mean")


mean = reduce_mean


# -- shape ops --------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if -1 not in shape and int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot reshape {x.shape} ({x.data.size} elements) to {shape}")
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from None

    def bw(g):
        _accum(x, g.reshape(x.shape))

    return _make(out, (x,), bw, "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(_norm_axis(a, x.ndim, "transpose") for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise AxisError(f"transpose: {axes} is not a permutation of {x.ndim} axes")
    inv = tuple(np.argsort(axes))

    def bw(g):
        _accum(x, g.transpose(inv))

    return _make(x.data.transpose(axes), (x,), bw, "transpose")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    a, b = _norm_axis(a, x.ndim, "swapaxes"), _norm_axis(b, x.ndim, "swapaxes")
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def expand_dims(x: Tensor, axis: int) -> Tensor:
    shape = list(x.shape)
    axis = axis if axis >= 0 else x.ndim + 1 + axis
    shape.insert(axis, 1)
    return reshape(x, shape)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: {x.shape} cannot broadcast to {shape}") from None

    def bw(g):
        _accum(x, _unbroadcast(g, x.shape))

    return _make(np.array(out), (x,), bw, "broadcast")


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat: empty list")
    ndim = parts[0].ndim
    axis = _norm_axis(axis, ndim, "concat")
    for p in parts[1:]:
        if p.ndim != ndim or any(p.shape[i] != parts[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(
                f"concat: extents {[q.shape for q in parts]} disagree off axis {axis}"
            )
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                idx = [slice(None)] * ndim
                idx[axis] = slice(lo, hi)
                _accum(p, g[tuple(idx)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw, "concat")


def take(x: Tensor, index: int, axis: int) -> Tensor:
    """Select one slice along ``axis`` (the axis is dropped)."""
    axis = _norm_axis(axis, x.ndim, "take")
    out = np.take(x.data, index, axis=axis)

    def bw(g):
        full = np.zeros(x.shape)
        idx = [slice(None)] * x.ndim
        idx[axis] = index
        full[tuple(idx)] = g
        _accum(x, full)

    return _make(out, (x,), bw, "take")


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ for {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch extents of {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` over the last axis; ``W`` is stored ``[in, out]``."""
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: input width {x.shape} does not match weight {W.shape}")
    if x.ndim == 1:
        out = reshape(matmul(reshape(x, (1, -1)), W), (W.shape[1],))
    else:
        out = matmul(x, W)
    return out if b is None else add(out, b)


# -- normalisations and activations with fused gradients --------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, x.ndim, "softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), bw, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.data
            dx = inv / d * (
                d * gh - gh.sum(axis=-1, keepdims=True) - xhat * (gh * xhat).sum(axis=-1, keepdims=True)
            )
            _accum(x, dx)

    return _make(out, (x, gamma, beta), bw, "layer_norm")


@dataclass
class BatchNormState:
    """Running statistics for one batchnorm layer (not learnable)."""

    mean: np.ndarray
    var: np.ndarray
    training: bool = True
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def create(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels))


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, stats: BatchNormState) -> Tensor:
    """Per-channel normalisation of ``x[..., C, L]`` over every other axis."""
    if x.ndim < 2 or x.shape[-2] != gamma.shape[0]:
        raise ShapeError(f"batchnorm: input {x.shape} does not have {gamma.shape[0]} channels on axis -2")
    c = x.shape[-2]
    red = tuple(i for i in range(x.ndim) if i != x.ndim - 2)
    n = x.data.size // c
    bshape = (c, 1)
    if stats.training:
        mu = x.data.mean(axis=red).reshape(bshape)
        xc = x.data - mu
        var = (xc * xc).mean(axis=red).reshape(bshape)
        inv = 1.0 / np.sqrt(var + stats.eps)
        xhat = xc * inv
        m = stats.momentum
        stats.mean = (1 - m) * stats.mean + m * mu.ravel()
        unbiased = var.ravel() * (n / (n - 1)) if n > 1 else var.ravel()
        stats.var = (1 - m) * stats.var + m * unbiased
    else:
        inv = 1.0 / np.sqrt(stats.var.reshape(bshape) + stats.eps)
        xhat = (x.data - stats.mean.reshape(bshape)) * inv
    g_ = gamma.data.reshape(bshape)
    out = xhat * g_ + beta.data.reshape(bshape)
    training = stats.training

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=red))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=red))
        if x.requires_grad:
            gh = g * g_
            if training:
                s1 = gh.sum(axis=red).reshape(bshape)
                s2 = (gh * xhat).sum(axis=red).reshape(bshape)
                dx = inv / n * (n * gh - s1 - xhat * s2)
            else:
                dx = gh * inv
            _accum(x, dx)

    return _make(out, (x, gamma, beta), bw, "batchnorm")


def conv1d(x: Tensor, W: Tensor, b: Tensor | None, padding: int | None = None) -> Tensor:
    """Cross-correlation of ``x[..., C_in, L]`` with ``W[C_out, C_in, k]``."""
    c_out, c_in, k = W.shape
    if k % 2 == 0:
        raise ShapeError(f"conv1d: kernel size {k} must be odd")
    p = (k - 1) // 2 if padding is None else padding
    if x.ndim < 2 or x.shape[-2] != c_in:
        raise ShapeError(f"conv1d: input {x.shape} does not have {c_in} channels on axis -2")
    L = x.shape[-1]
    if k > L + 2 * p:
        raise ShapeError(f"conv1d: kernel {k} is larger than padded length {L + 2 * p}")
    pad = [(0, 0)] * (x.ndim - 1) + [(p, p)]
    xp = np.pad(x.data, pad)
    win = sliding_window_view(xp, k, axis=-1)  # [..., C_in, L_out, k]
    out = np.einsum("...clk,ock->...ol", win, W.data)
    if b is not None:
        out = out + b.data[:, None]
    L_out = out.shape[-1]

    def bw(g):
        if W.requires_grad:
            flat_win = win.reshape(-1, *win.shape[-3:])
            _accum(W, np.einsum("nclk,nol->ock", flat_win, g.reshape(-1, c_out, L_out)))
        if b is not None and b.requires_grad:
            _accum(b, g.reshape(-1, c_out, L_out).sum(axis=(0, 2)))
        if x.requires_grad:
            gxp = np.zeros(xp.shape)
            for j in range(k):
                gxp[..., j : j + L_out] += np.einsum("...ol,oc->...cl", g, W.data[:, :, j])
            _accum(x, gxp[..., p : p + L])

    parents = (x, W) if b is None else (x, W, b)
    return _make(out, parents, bw, "conv1d")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over all leading axes, via log-sum-exp."""
    labels = np.asarray(labels, dtype=np.int64)
    v = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= v):
        raise ValueError(f"cross_entropy: label out of range for vocabulary of size {v}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    count = max(labels.size, 1)
    loss = -picked.sum() / count

    def bw(g):
        p = np.exp(logp)
        np.put_along_axis(p, labels[..., None], np.take_along_axis(p, labels[..., None], axis=-1) - 1.0, axis=-1)
        _accum(logits, g * p / count)

    return _make(np.asarray(loss), (logits,), bw, "cross_entropy")


# -- reverse sweep ----------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every ancestor of ``loss`` that requires grad."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

