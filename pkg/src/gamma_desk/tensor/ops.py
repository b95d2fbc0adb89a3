"""Differentiable primitives over :class:`Tensor`.

Every op computes its forward result with numpy and registers a closure
computing input gradients from the output gradient.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ShapeError, Tensor, as_tensor, record_op


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


# elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return record_op(ad * bd, (a, b),
                     lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return record_op(out, (a, b),
                     lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record_op(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return record_op(x ** p, (a,), lambda g: (g * p * x ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return record_op(np.log(x), (a,), lambda g: (g / x,))


def abs(a) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    x = a.data
    return record_op(np.abs(x), (a,), lambda g: (g * np.sign(x),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return record_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return record_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return record_op(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return record_op(a.data * scale, (a,), lambda g: (g * scale,))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return record_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# reductions and shape ------------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return record_op(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return record_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return record_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return record_op(np.array(a.data[idx]), (a,), back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return record_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                     lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)
    return record_op(np.stack([t.data for t in tensors], axis=axis), tuple(tensors),
                     lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes must agree."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"inner dimensions differ: {ad.shape} x {bd.shape}")
    out = ad @ bd

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return record_op(out, (a, b), back)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {a.ndim}")
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record_op(out, (a,), back)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out = x - lse
    prob = np.exp(out)

    def back(g):
        return (g - prob * g.sum(axis=axis, keepdims=True),)

    return record_op(out, (a,), back)


# convolution ---------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(C*kh*kw, N*Ho*Wo) patch matrix; spatial axes innermost keeps the copy cache-friendly."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * ho * wo)


def _correlate(xp: np.ndarray, wmat: np.ndarray, kh: int, kw: int, stride: int):
    n = xp.shape[0]
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = (wmat @ cols).reshape(-1, n, ho, wo).transpose(1, 0, 2, 3)
    return out, cols, ho, wo


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with an OIHW kernel."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIHW kernel, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if c != ci:
        raise ShapeError(f"input has {c} channels, kernel expects {ci}")
    if stride < 1 or padding < 0:
        raise ShapeError("stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    wmat = w.data.reshape(o, -1)
    out, cols, ho, wo = _correlate(xp, wmat, kh, kw, stride)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data.reshape(1, o, 1, 1)
        parents.append(b)

    def back(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(o, -1)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            if stride == 1 and padding <= min(kh, kw) - 1:
                # input gradient is a full correlation with the flipped kernel
                ph, pw = kh - 1 - padding, kw - 1 - padding
                gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
                flipped = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
                gx = _correlate(gp, flipped, kh, kw, 1)[0]
            else:
                dcols = (wmat.T @ g2).reshape(c, kh, kw, n, ho, wo)
                dxp = np.zeros((c, n, hp, wp))
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
                dxp = dxp.transpose(1, 0, 2, 3)
                gx = dxp[:, :, padding:padding + h, padding:padding + wd] if padding else dxp
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return record_op(np.ascontiguousarray(out), tuple(parents), back)


def upsample_nearest(x, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def back(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return record_op(out, (x,), back)


def instance_norm(x, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over spatial axes (no affine)."""
    x = as_tensor(x)
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def back(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gx = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return record_op(xhat, (x,), back)


# losses ----------------------------------------------------------------

def bce_with_logits(logits, targets, weights=None) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 targets."""
    logits = as_tensor(logits)
    z = logits.data
    t = _data(targets)
    wts = np.ones_like(z) if weights is None else _data(weights)
    denom = max(float(wts.sum()), 1.0)
    # log(1 + exp(-|z|)) form is overflow-free
    per = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    value = np.asarray((per * wts).sum() / denom)

    def back(g):
        return (g * (_sigmoid(z) - t) * wts / denom,)

    return record_op(value, (logits,), back)


def cross_entropy(logits, labels, weights=None) -> Tensor:
    """Mean softmax cross-entropy over rows of ``logits`` with integer labels."""
    logits = as_tensor(logits)
    z = logits.data
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(z.shape[0])
    wts = np.ones(z.shape[0]) if weights is None else _data(weights)
    denom = max(float(wts.sum()), 1.0)
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    value = np.asarray(-(logp[rows, labels] * wts).sum() / denom)

    def back(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (g * grad * wts[:, None] / denom,)

    return record_op(value, (logits,), back)


def smooth_l1(pred, target, beta: float = 1.0 / 9.0, normalizer: float | None = None) -> Tensor:
    """Huber-style loss summed over elements, divided by ``normalizer`` (default: count)."""
    pred = as_tensor(pred)
    d = pred.data - _data(target)
    ad = np.abs(d)
    small = ad < beta
    per = np.where(small, 0.5 * d * d / beta, ad - 0.5 * beta)
    norm = float(d.size if normalizer is None else normalizer)
    norm = max(norm, 1.0)
    value = np.asarray(per.sum() / norm)

    def back(g):
        return (g * np.where(small, d / beta, np.sign(d)) / norm,)

    return record_op(value, (pred,), back)
