"""Differentiable primitives.

Every function here takes Tensors (or array-likes, treated as constants),
computes the forward value with numpy and registers a vector-Jacobian
product on the active tapes. Feature maps use NHWC layout.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, record

NORM_EPS = 1e-8


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return record("add", (a, b), out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return record("sub", (a, b), out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad * bd

    def vjp(g):
        return (
            _unbroadcast(g * bd, a.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, b.shape) if b.requires_grad else None,
        )

    return record("mul", (a, b), out, vjp)


def matmul(a, b) -> Tensor:
    """Batched matrix product following ``np.matmul`` semantics (ndim >= 2)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return record("matmul", (a, b), out, vjp)


def linear(x, w) -> Tensor:
    """``out[..., o] = sum_i w[o, i] * x[..., i]``."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: x {x.shape} incompatible with W {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd.T

    def vjp(g):
        gx = g @ wd if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = g.reshape(-1, g.shape[-1]).T @ xd.reshape(-1, xd.shape[-1])
        return gx, gw

    return record("linear", (x, w), out, vjp)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record("sum", (x,), np.asarray(out), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return record("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return record("transpose", (x,), np.transpose(x.data, axes), lambda g: (np.transpose(g, inv),))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = np.array(x.data[index])

    def vjp(g):
        z = np.zeros_like(x.data)
        np.add.at(z, index, g)
        return (z,)

    return record("getitem", (x,), out, vjp)


def take(x, idx, axis: int) -> Tensor:
    """Gather ``x`` along ``axis`` with an integer index array."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    out = np.take(x.data, idx, axis=axis)
    ax = axis % x.ndim

    def vjp(g):
        z = np.zeros_like(x.data)
        zm = np.moveaxis(z, ax, 0)
        gm = np.moveaxis(g, list(range(ax, ax + idx.ndim)), list(range(idx.ndim)))
        np.add.at(zm, idx, gm)
        return (z,)

    return record("take", (x,), out, vjp)


def concat(xs: Sequence, axis: int) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return record("concat", xs, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def abs(x) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    return record("abs", (x,), np.abs(x.data), lambda g: (g * np.sign(x.data),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return record("square", (x,), x.data * x.data, lambda g: (2.0 * g * x.data,))


def clamp01(x) -> Tensor:
    """Clamp to [0, 1]; gradient passes through inside the interval only."""
    x = as_tensor(x)
    inside = (x.data >= 0.0) & (x.data <= 1.0)
    return record("clamp01", (x,), np.clip(x.data, 0.0, 1.0), lambda g: (g * inside,))


def l2_normalize(x, axis: int = -1, eps: float = NORM_EPS) -> Tensor:
    """``x / max(||x||, eps)`` along ``axis``."""
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ShapeError("l2_normalize: zero-length axis")
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    active = norm > eps
    denom = np.where(active, norm, eps)
    y = x.data / denom

    def vjp(g):
        proj = np.sum(g * y, axis=axis, keepdims=True)
        return (np.where(active, (g - y * proj) / denom, g / eps),)

    return record("l2_normalize", (x,), y, vjp)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.shape[axis] < 1:
        raise ShapeError("softmax over an empty axis")
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return record("softmax", (x,), y, vjp)


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded 2-D convolution (cross-correlation).

    x: [B, H, W, Cin]; w: [kh, kw, Cin, Cout]; b: [Cout].
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: x {x.shape} incompatible with w {w.shape}")
    kh, kw, cin, cout = w.shape
    bsz, h, wd, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d: kernel larger than padded input")
    wdat = w.data
    out = np.zeros((bsz, ho, wo, cout))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride, :]
            out += patch @ wdat[i, j]
    inputs = [x, w]
    if b is not None:
        b = as_tensor(b)
        out += b.data
        inputs.append(b)

    def vjp(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(wdat) if w.requires_grad else None
        g2 = g.reshape(-1, cout)
        for i in range(kh):
            for j in range(kw):
                rs = slice(i, i + stride * (ho - 1) + 1, stride)
                cs = slice(j, j + stride * (wo - 1) + 1, stride)
                if gw is not None:
                    gw[i, j] = xp[:, rs, cs, :].reshape(-1, cin).T @ g2
                if gxp is not None:
                    gxp[:, rs, cs, :] += g @ wdat[i, j].T
        gx = None
        if gxp is not None:
            gx = gxp[:, padding : padding + h, padding : padding + wd, :] if padding else gxp
        res = [gx, gw]
        if b is not None:
            res.append(g2.sum(axis=0))
        return res

    return record("conv2d", inputs, out, vjp)


def upsample_nearest(x, factor: int = 2) -> Tensor:
    """Integer-factor nearest upsampling of an NHWC map."""
    x = as_tensor(x)
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)
    b, h, w, c = x.shape

    def vjp(g):
        return (g.reshape(b, h, factor, w, factor, c).sum(axis=(2, 4)),)

    return record("upsample_nearest", (x,), out, vjp)


def pad_reflect(x, pad_h: int, pad_w: int) -> Tensor:
    """Reflect-pad an NHWC map at the bottom and right edges."""
    x = as_tensor(x)
    if pad_h == 0 and pad_w == 0:
        return x
    h, w = x.shape[1:3]
    rows = _reflect_index(h, h + pad_h)
    cols = _reflect_index(w, w + pad_w)
    return take(take(x, rows, axis=1), cols, axis=2)


def _reflect_index(n: int, m: int) -> np.ndarray:
    if n == 1:
        return np.zeros(m, dtype=np.intp)
    period = 2 * (n - 1)
    i = np.arange(m) % period
    return np.where(i < n, i, period - i).astype(np.intp)
