"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a :class:`Tensor` wraps a numpy array,
each differentiable operation records a backward closure, and
``Tensor.backward`` replays the tape in reverse topological order.
Only the primitives the landmark models need are implemented.

Everything runs in float64; checkpoints downcast to float32 on disk.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericsError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (used for evaluation and numeric probes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """N-dimensional float64 array participating in reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._prev: tuple["Tensor", ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name: str | None = None

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

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Accumulate gradients of this value into every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() without an explicit gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ShapeError(f"gradient shape {grad.shape} != value shape {self.shape}")

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
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))

        _accum(self, grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; scalars are wrapped as constant tensors.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_scalar(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Parameter(Tensor):
    """Learnable tensor; the value is filled in by ``nn.initialize``.

    ``init`` names the fill rule ("he", "xavier", "zeros", "ones") and the
    fan counts feed the variance-scaled rules.
    """

    __slots__ = ("init", "fan_in", "fan_out")

    def __init__(self, shape: Sequence[int], init: str = "xavier",
                 fan_in: int | None = None, fan_out: int | None = None):
        super().__init__(np.zeros(tuple(shape)), requires_grad=True)
        self.init = init
        self.fan_in = fan_in
        self.fan_out = fan_out


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...],
             backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _from_op(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _from_op(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _from_op(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _from_op(out_data, (a, b), backward)


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            _accum(a, -g)

    return _from_op(-a.data, (a,), backward)


def pow_scalar(a, p: float) -> Tensor:
    a = _wrap(a)
    p = float(p)
    out_data = a.data ** p

    def backward(g):
        if a.requires_grad:
            _accum(a, g * p * a.data ** (p - 1.0))

    return _from_op(out_data, (a,), backward)


def relu(a) -> Tensor:
    a = _wrap(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * (a.data > 0.0))

    return _from_op(out_data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * out_data * (1.0 - out_data))

    return _from_op(out_data, (a,), backward)


def clamp01(a) -> Tensor:
    """Clip to [0, 1]; the gradient passes through on the closed interval.

    Exact boundary points take the interior (pass-through) subgradient.
    """
    a = _wrap(a)
    out_data = np.clip(a.data, 0.0, 1.0)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * ((a.data >= 0.0) & (a.data <= 1.0)))

    return _from_op(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.data.shape))

    return _from_op(out_data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = np.transpose(a.data, axes)

    def backward(g):
        if a.requires_grad:
            _accum(a, np.transpose(g, inv))

    return _from_op(out_data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, g[tuple(sl)])

    return _from_op(out_data, tuple(tensors), backward)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = _wrap(a)
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out_data = a.data[sl].copy()

    def backward(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[sl] += g

    return _from_op(out_data, (a,), backward)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape))

    return _from_op(out_data, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# matrix products
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul expects rank-2 operands with matching inner extents, got {a.shape} and {b.shape}"
        )
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _from_op(out_data, (a, b), backward)


def bmm(a, b) -> Tensor:
    """Batched matrix product over a shared leading batch axis."""
    a, b = _wrap(a), _wrap(b)
    if (a.data.ndim != 3 or b.data.ndim != 3 or a.data.shape[0] != b.data.shape[0]
            or a.data.shape[2] != b.data.shape[1]):
        raise ShapeError(f"bmm expects (B,m,k) and (B,k,n), got {a.shape} and {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ b.data.transpose(0, 2, 1))
        if b.requires_grad:
            _accum(b, a.data.transpose(0, 2, 1) @ g)

    return _from_op(out_data, (a, b), backward)


# ---------------------------------------------------------------------------
# convolution family (im2col based)
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(n, c * kh * kw, oh * ow), oh, ow


def _col2im(cols: np.ndarray, hw: tuple[int, int], c: int, kh: int, kw: int,
            stride: int, padding: int) -> np.ndarray:
    n = cols.shape[0]
    h, w = hw
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    cols6 = cols.reshape(n, c, kh, kw, oh, ow)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols6[:, :, i, j]
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return out


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input and OIKK weight, no bias."""
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW and OIKK, got {x.shape} and {w.shape}")
    n, cin, h, wid = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wid + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ConfigError(
            f"conv2d output extent non-positive ({oh}x{ow}) for input {x.shape}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )
    cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    w2 = w.data.reshape(cout, -1)
    out_data = np.matmul(w2, cols).reshape(n, cout, oh, ow)

    def backward(g):
        gf = g.reshape(n, cout, oh * ow)
        if w.requires_grad:
            _accum(w, np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.data.shape))
        if x.requires_grad:
            dcols = np.matmul(w2.T, gf)
            _accum(x, _col2im(dcols, (h, wid), cin, kh, kw, stride, padding))

    return _from_op(out_data, (x, w), backward)


def conv_transpose2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 2-D convolution; weight layout is (Cin, Cout, K, K)."""
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects NCHW and IOKK, got {x.shape} and {w.shape}")
    n, cin, h, wid = x.data.shape
    cin_w, cout, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv_transpose2d channel mismatch: input {x.shape} vs weight {w.shape}")
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (wid - 1) * stride - 2 * padding + kw
    if oh <= 0 or ow <= 0:
        raise ConfigError(f"conv_transpose2d output extent non-positive ({oh}x{ow})")
    w2 = w.data.reshape(cin, cout * kh * kw)
    x_flat = x.data.reshape(n, cin, h * wid)
    cols = np.matmul(w2.T, x_flat)
    out_data = _col2im(cols, (oh, ow), cout, kh, kw, stride, padding)

    def backward(g):
        dcols, _, _ = _im2col(g, kh, kw, stride, padding)
        if x.requires_grad:
            _accum(x, np.matmul(w2, dcols).reshape(x.data.shape))
        if w.requires_grad:
            dw2t = np.matmul(dcols, x_flat.transpose(0, 2, 1)).sum(axis=0)
            _accum(w, dw2t.T.reshape(w.data.shape))

    return _from_op(out_data, (x, w), backward)


# ---------------------------------------------------------------------------
# pooling / resampling
# ---------------------------------------------------------------------------

def maxpool2d(x, kernel: int = 2) -> Tensor:
    x = _wrap(x)
    n, c, h, w = x.data.shape
    k = kernel
    if h % k or w % k:
        raise ConfigError(f"maxpool2d needs extents divisible by {k}, got {x.shape}")
    oh, ow = h // k, w // k
    windows = (x.data.reshape(n, c, oh, k, ow, k)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, oh, ow, k * k))
    idx = windows.argmax(axis=-1)
    out_data = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        if x.requires_grad:
            buf = np.zeros_like(windows)
            np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
            _accum(x, buf.reshape(n, c, oh, ow, k, k)
                        .transpose(0, 1, 2, 4, 3, 5)
                        .reshape(n, c, h, w))

    return _from_op(out_data, (x,), backward)


def upsample_nearest(x, factor: int) -> Tensor:
    x = _wrap(x)
    if factor == 1:
        return x
    n, c, h, w = x.data.shape
    out_data = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(g):
        if x.requires_grad:
            _accum(x, g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)))

    return _from_op(out_data, (x,), backward)


def adaptive_avg_pool(x) -> Tensor:
    """Global average over each channel plane; returns an (N, C) tensor."""
    x = _wrap(x)
    if x.data.ndim != 4:
        raise ShapeError(f"adaptive_avg_pool expects NCHW, got shape {x.shape}")
    n, c, h, w = x.data.shape
    out_data = x.data.mean(axis=(2, 3))

    def backward(g):
        if x.requires_grad:
            _accum(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape))

    return _from_op(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# normalization and dropout
# ---------------------------------------------------------------------------

def batch_norm2d(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization with in-place running-stat updates."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            if training:
                m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
                dxhat = g * gamma.data[None, :, None, None]
                t1 = m * dxhat
                t2 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                t3 = xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                _accum(x, inv[None, :, None, None] / m * (t1 - t2 - t3))
            else:
                _accum(x, g * (gamma.data * inv)[None, :, None, None])

    return _from_op(out_data, (x, gamma, beta), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine pair."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gamma.data + beta.data
    lead = tuple(range(x.data.ndim - 1))

    def backward(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=lead))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=lead))
        if x.requires_grad:
            m = x.data.shape[-1]
            dxhat = g * gamma.data
            t1 = m * dxhat
            t2 = dxhat.sum(axis=-1, keepdims=True)
            t3 = xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            _accum(x, inv / m * (t1 - t2 - t3))

    return _from_op(out_data, (x, gamma, beta), backward)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    x = _wrap(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a random generator")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out_data = x.data * mask

    def backward(g):
        if x.requires_grad:
            _accum(x, g * mask)

    return _from_op(out_data, (x,), backward)


def assert_finite(t: Tensor, what: str) -> Tensor:
    if not np.isfinite(t.data).all():
        raise NumericsError(f"non-finite values in {what}")
    return t
