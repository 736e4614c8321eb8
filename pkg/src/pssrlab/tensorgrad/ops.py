"""Differentiable operations used by the QA and SR networks.

Every op returns a new :class:`Tensor` whose ``op`` attribute names the op
kind and whose backward closure maps the output gradient to one gradient per
parent (``None`` for parents that need none).
"""
from __future__ import annotations

import numpy as np

from .. import _backend
from .tensor import Tensor, as_tensor


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def _make(data, parents, op, backward):
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), _parents=tuple(parents), _op=op)
    if out.requires_grad:
        out._backward = backward
    return out


def _check_rank(t, rank, what):
    if t.ndim != rank:
        raise ShapeError(f"{what}: expected rank {rank}, got shape {t.shape}")


def conv2d(x, weight, bias, stride=1, pad=0):
    """2-D cross-correlation with zero padding.

    x is (N, Cin, H, W), weight (Cout, Cin, k, k), bias (Cout,).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _check_rank(x, 4, "conv2d input")
    _check_rank(weight, 4, "conv2d weight")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input channels (dim 1) = {cin} but weight expects {wcin}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {kh}x{kw}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match output channels {cout}")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d: stride must be >= 1 and pad >= 0")
    k = kh
    if h + 2 * pad < k:
        raise ShapeError(f"conv2d: height (dim 2) {h} + 2*pad < kernel {k}")
    if w + 2 * pad < k:
        raise ShapeError(f"conv2d: width (dim 3) {w} + 2*pad < kernel {k}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(x.data)
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = _backend.im2col(xp, k, stride)  # (N, Cin*k*k, Ho*Wo)
    w2 = weight.data.reshape(cout, -1)
    out = np.matmul(w2, cols) + bias.data[None, :, None]
    out = out.reshape(n, cout, ho, wo)
    padded_shape = xp.shape

    def backward(g):
        g2 = g.reshape(n, cout, ho * wo)
        gb = g2.sum(axis=(0, 2)) if bias.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = np.zeros_like(w2)
            for i in range(n):
                gw += g2[i] @ cols[i].T
            gw = gw.reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2)
            gxp = _backend.col2im(gcols, padded_shape, k, stride)
            gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        return gx, gw, gb

    return _make(out, (x, weight, bias), "conv2d", backward)


def dense(x, weight, bias):
    """Affine map x @ weight + bias for x (N, D), weight (D, M)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _check_rank(x, 2, "dense input")
    _check_rank(weight, 2, "dense weight")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: input dim 1 = {x.shape[1]} but weight dim 0 = {weight.shape[0]}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias shape {bias.shape} does not match weight dim 1 = {weight.shape[1]}")
    out = x.data @ weight.data + bias.data

    def backward(g):
        return (
            g @ weight.data.T if x.requires_grad else None,
            x.data.T @ g if weight.requires_grad else None,
            g.sum(axis=0) if bias.requires_grad else None,
        )

    return _make(out, (x, weight, bias), "dense", backward)


def leaky_relu(x, slope=0.1):
    x = as_tensor(x)
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)

    def backward(g):
        # the kink at 0 takes the slope branch
        return (np.where(pos, g, slope * g),)

    return _make(out, (x,), "leaky_relu", backward)


def _same_shape(a, b, opname):
    if a.shape != b.shape:
        for dim, (u, v) in enumerate(zip(a.shape, b.shape)):
            if u != v:
                raise ShapeError(f"{opname}: dim {dim} differs ({u} vs {v}); shapes {a.shape} and {b.shape}")
        raise ShapeError(f"{opname}: rank differs; shapes {a.shape} and {b.shape}")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), "add", lambda g: (g, g))


def subtract(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "subtract")
    return _make(a.data - b.data, (a, b), "subtract", lambda g: (g, -g))


def concat_channels(tensors):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat_channels: empty operand list")
    ref = tensors[0]
    for t in tensors:
        _check_rank(t, 4, "concat_channels operand")
        for dim in (0, 2, 3):
            if t.shape[dim] != ref.shape[dim]:
                raise ShapeError(
                    f"concat_channels: dim {dim} differs ({t.shape[dim]} vs {ref.shape[dim]})"
                )
    out = np.concatenate([t.data for t in tensors], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return _make(out, tensors, "concat_channels", backward)


def slice_channels(x, start, stop):
    x = as_tensor(x)
    _check_rank(x, 4, "slice_channels input")
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_channels: [{start}, {stop}) outside channel dim {x.shape[1]}")
    out = x.data[:, start:stop].copy()

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _make(out, (x,), "slice_channels", backward)


def crop2d(x, top, left, height, width):
    x = as_tensor(x)
    _check_rank(x, 4, "crop2d input")
    if top < 0 or left < 0 or top + height > x.shape[2] or left + width > x.shape[3]:
        raise ShapeError(f"crop2d: window ({top},{left},{height},{width}) outside {x.shape[2:]}")
    out = x.data[:, :, top : top + height, left : left + width].copy()

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, :, top : top + height, left : left + width] = g
        return (gx,)

    return _make(out, (x,), "crop2d", backward)


def global_avg_pool(x):
    """(N, C, H, W) -> (N, C) spatial mean."""
    x = as_tensor(x)
    _check_rank(x, 4, "global_avg_pool input")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return _make(out, (x,), "global_avg_pool", backward)


def avg_pool2x2(x):
    """Non-overlapping 2x2 mean pooling; H and W must be even."""
    x = as_tensor(x)
    _check_rank(x, 4, "avg_pool2x2 input")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2x2: spatial dims must be even, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
        return (gx,)

    return _make(out, (x,), "avg_pool2x2", backward)


def mse(a, b):
    """Mean of squared elementwise differences, as a 0-d tensor."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mse")
    diff = a.data - b.data
    count = diff.size
    out = np.asarray(np.mean(diff * diff))

    def backward(g):
        scale = 2.0 * g / count
        return (scale * diff if a.requires_grad else None, -scale * diff if b.requires_grad else None)

    return _make(out, (a, b), "mse", backward)


def scalar_combine(scalars, weights):
    """Weighted sum of 0-d tensors, accumulated left to right."""
    scalars = [as_tensor(s) for s in scalars]
    if len(scalars) != len(weights):
        raise ShapeError("scalar_combine: one weight per scalar required")
    for s in scalars:
        if s.size != 1:
            raise ShapeError(f"scalar_combine: operand of shape {s.shape} is not a scalar")
    total = 0.0
    for s, wgt in zip(scalars, weights):
        total = total + float(wgt) * float(s.data)
    weights = [float(wgt) for wgt in weights]

    def backward(g):
        return tuple(wgt * g for wgt in weights)

    return _make(np.asarray(total), scalars, "scalar_combine", backward)
