"""Reverse-mode differentiable tensors over float64 numpy arrays.

Every op result remembers its parents and a closure that pushes the
upstream gradient back to them.  Nodes carry a creation index taken from a
global counter, so ``Tensor.backward`` can replay the executed ops in exact
reverse order without a separate tape object.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64

_node_ids = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def _grad_mode(enabled: bool):
    prev = is_grad_enabled()
    _state.grad_enabled = enabled
    try:
        yield
    finally:
        _state.grad_enabled = prev


def no_grad():
    """Run ops without recording them (inference)."""
    return _grad_mode(False)


def enable_grad():
    """Record ops even inside an enclosing ``no_grad``."""
    return _grad_mode(True)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._id = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Propagate gradients to every reachable node that requires them.

        Ops are visited in strict reverse creation order; fan-out gradients
        add up before a node's own backward closure runs.
        """
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        nodes: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in nodes:
                continue
            nodes[node._id] = node
            stack.extend(p for p in node._parents if p.requires_grad)
        self._accumulate(np.asarray(grad, dtype=DTYPE))
        for node_id in sorted(nodes, reverse=True):
            node = nodes[node_id]
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable tensor with a gradient and a momentum buffer of equal shape."""

    __slots__ = ("momentum_buf", "name", "decay")

    def __init__(self, data, name: str = "", decay: bool = True):
        super().__init__(data, requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.momentum_buf = np.zeros_like(self.data)
        self.name = name
        # weights take the L2 penalty; biases and norm affine terms do not
        self.decay = decay

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)

    return _make(x.data * mask, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - y * y))

    return _make(y, (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(g / x.data)

    return _make(np.log(x.data), (x,), backward)


# ------------------------------------------------------------------ reductions


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def sum_squares(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(2.0 * g * x.data)

    return _make(np.sum(x.data * x.data), (x,), backward)


# -------------------------------------------------------------------- shaping


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def select(x: Tensor, index: int, axis: int) -> Tensor:
    """Take one slice along ``axis`` (the axis is dropped)."""

    def backward(g):
        full = np.zeros_like(x.data)
        idx = [slice(None)] * x.ndim
        idx[axis] = index
        full[tuple(idx)] = g
        x._accumulate(full)

    return _make(np.take(x.data, index, axis=axis), (x,), backward)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for x of shape [N, K] and weight [J, K]."""

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.data)
        if weight.requires_grad:
            weight._accumulate(g.T @ x.data)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(y * (g - np.sum(g * y, axis=axis, keepdims=True)))

    return _make(y, (x,), backward)


# ------------------------------------------------------------------ convolution


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           padding: tuple[int, int, int, int] = (0, 0, 0, 0)) -> Tensor:
    """Stride-1 cross-correlation of x[N,Cin,H,W] with weight[Cout,Cin,P,Q].

    ``padding`` is (top, bottom, left, right) zero padding.
    """
    n, cin, h, w = x.shape
    cout, wcin, p, q = weight.shape
    if wcin != cin:
        raise ValueError(f"input has {cin} channels, kernel expects {wcin}")
    top, bottom, left, right = padding
    hp, wp = h + top + bottom, w + left + right
    if p > hp or q > wp:
        raise ValueError(f"kernel {p}x{q} larger than padded input {hp}x{wp}")
    ho, wo = hp - p + 1, wp - q + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    windows = sliding_window_view(xp, (p, q), axis=(2, 3))  # N,Cin,Ho,Wo,P,Q
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * p * q)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        if weight.requires_grad:
            weight._accumulate((g2.T @ cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, cin, p, q)
            dxp = np.zeros_like(xp)
            for i in range(p):
                for j in range(q):
                    dxp[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            x._accumulate(dxp[:, :, top:top + h, left:left + w])

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; trailing odd rows/columns are dropped."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ValueError(f"cannot 2x2-pool a {h}x{w} map")
    blocks = (x.data[:, :, :2 * h2, :2 * w2]
              .reshape(n, c, h2, 2, w2, 2)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(n, c, h2, w2, 4))
    arg = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, arg, axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg, g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[:, :, :2 * h2, :2 * w2] = (gb.reshape(n, c, h2, w2, 2, 2)
                                       .transpose(0, 1, 2, 4, 3, 5)
                                       .reshape(n, c, 2 * h2, 2 * w2))
        x._accumulate(gx)

    return _make(out, (x,), backward)


# -------------------------------------------------------------- normalization


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float):
    """Normalize x[N,C,...] per channel with batch statistics.

    Returns the output tensor plus the batch mean and (population) variance.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = [1] * x.ndim
    bshape[1] = x.shape[1]
    m = x.data.size // x.shape[1]
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    g_ = gamma.data.reshape(bshape)
    out = g_ * xhat + beta.data.reshape(bshape)

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * g_
            dx = (inv_std / m) * (m * dxhat
                                  - dxhat.sum(axis=axes, keepdims=True)
                                  - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
            x._accumulate(dx)

    return _make(out, (x, gamma, beta), backward), mu.reshape(-1), var.reshape(-1)


def batch_norm_infer(x: Tensor, gamma: Tensor, beta: Tensor,
                     running_mean: np.ndarray, running_var: np.ndarray, eps: float) -> Tensor:
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = [1] * x.ndim
    bshape[1] = x.shape[1]
    inv_std = (1.0 / np.sqrt(running_var + eps)).reshape(bshape)
    xhat = (x.data - running_mean.reshape(bshape)) * inv_std
    g_ = gamma.data.reshape(bshape)

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            x._accumulate(g * g_ * inv_std)

    return _make(g_ * xhat + beta.data.reshape(bshape), (x, gamma, beta), backward)


# ----------------------------------------------------------------------- loss


def nll_of_probs(probs: Tensor, labels: np.ndarray, floor: float = 1e-300) -> Tensor:
    """Mean of ``-log p[n, labels[n]]`` over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    n, m = probs.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise ValueError(f"label out of range [0, {m})")
    rows = np.arange(n)
    p_true = np.maximum(probs.data[rows, labels], floor)

    def backward(g):
        gp = np.zeros_like(probs.data)
        gp[rows, labels] = -g / (n * p_true)
        probs._accumulate(gp)

    return _make(np.asarray(-np.log(p_true).mean()), (probs,), backward)
