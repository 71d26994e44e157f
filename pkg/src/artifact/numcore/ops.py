"""Differentiable primitives.

Every function accepts :class:`Var` or array-likes and returns a ``Var``.
Each primitive supplies a vector-Jacobian product that only computes the
parent gradients the tape actually needs.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from artifact.errors import EvenKernel, KernelTooLarge, ShapeMismatch
from artifact.numcore.tensor import Var, as_var, make

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# elementwise -----------------------------------------------------------------

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.shape, b.shape

    def vjp(g, need):
        return (unbroadcast(g, sa) if need[0] else None,
                unbroadcast(g, sb) if need[1] else None)

    return make(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.shape, b.shape

    def vjp(g, need):
        return (unbroadcast(g, sa) if need[0] else None,
                unbroadcast(-g, sb) if need[1] else None)

    return make(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    ad, bd = a.data, b.data

    def vjp(g, need):
        return (unbroadcast(g * bd, ad.shape) if need[0] else None,
                unbroadcast(g * ad, bd.shape) if need[1] else None)

    return make(ad * bd, (a, b), vjp)


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g, need):
        return (unbroadcast(g / bd, ad.shape) if need[0] else None,
                unbroadcast(-g * out / bd, bd.shape) if need[1] else None)

    return make(out, (a, b), vjp)


def neg(a) -> Var:
    a = as_var(a)
    return make(-a.data, (a,), lambda g, need: (-g,))


def power(a, exponent: float) -> Var:
    a = as_var(a)
    x = a.data
    p = float(exponent)

    def vjp(g, need):
        return (g * p * np.power(x, p - 1.0),)

    return make(np.power(x, p), (a,), vjp)


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.data)
    return make(out, (a,), lambda g, need: (g * out,))


def log(a) -> Var:
    a = as_var(a)
    x = a.data
    return make(np.log(x), (a,), lambda g, need: (g / x,))


def sqrt(a) -> Var:
    """Square root whose gradient at exactly zero is taken as zero."""
    a = as_var(a)
    out = np.sqrt(a.data)

    def vjp(g, need):
        safe = np.where(out > 0.0, out, 1.0)
        return (np.where(out > 0.0, g / (2.0 * safe), 0.0),)

    return make(out, (a,), vjp)


def tanh(a) -> Var:
    a = as_var(a)
    out = np.tanh(a.data)
    return make(out, (a,), lambda g, need: (g * (1.0 - out * out),))


def relu(a) -> Var:
    a = as_var(a)
    x = a.data
    return make(np.maximum(x, 0.0), (a,), lambda g, need: (g * (x > 0.0),))


def gelu(a) -> Var:
    a = as_var(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT1_2))

    def vjp(g, need):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return make(x * cdf, (a,), vjp)


# reductions and shape ops ------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a, axis=None, keepdims: bool = False) -> Var:  # noqa: A001
    a = as_var(a)
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g, need):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return make(np.asarray(out, dtype=np.float64), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def max(a, axis: int) -> Var:  # noqa: A001
    """Max over one axis; the gradient goes to the first maximiser."""
    a = as_var(a)
    x = a.data
    axis = axis % x.ndim
    arg = np.expand_dims(np.argmax(x, axis=axis), axis)
    out = np.take_along_axis(x, arg, axis=axis).squeeze(axis)

    def vjp(g, need):
        gx = np.zeros_like(x)
        np.put_along_axis(gx, arg, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return make(out, (a,), vjp)


def reshape(a, shape) -> Var:
    a = as_var(a)
    src = a.shape
    return make(a.data.reshape(shape), (a,), lambda g, need: (g.reshape(src),))


def transpose(a, axes) -> Var:
    a = as_var(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make(a.data.transpose(axes), (a,), lambda g, need: (g.transpose(inv),))


def swapaxes(a, ax1: int, ax2: int) -> Var:
    a = as_var(a)
    return make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g, need: (np.swapaxes(g, ax1, ax2),))


def take(a, index) -> Var:
    """Basic or fancy indexing; repeated indices accumulate gradient."""
    a = as_var(a)
    shape = a.shape

    def vjp(g, need):
        gx = np.zeros(shape)
        np.add.at(gx, index, g)
        return (gx,)

    return make(np.array(a.data[index], dtype=np.float64), (a,), vjp)


def concat(parts, axis: int = 0) -> Var:
    parts = tuple(as_var(p) for p in parts)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g, need):
        return tuple(np.split(g, splits, axis=axis))

    return make(np.concatenate([p.data for p in parts], axis=axis), parts, vjp)


# linear algebra ----------------------------------------------------------------

def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeMismatch(f"matmul needs rank >= 2 operands, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeMismatch(f"inner dimensions differ: {ad.shape} @ {bd.shape}")

    def vjp(g, need):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if need[0] else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if need[1] else None
        return ga, gb

    return make(ad @ bd, (a, b), vjp)


# normalisation and probabilities ------------------------------------------------

def softmax(a, axis: int = -1) -> Var:
    a = as_var(a)
    x = a.data
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    s = z / z.sum(axis=axis, keepdims=True)

    def vjp(g, need):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make(s, (a,), vjp)


def log_softmax(a, axis: int = -1) -> Var:
    a = as_var(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def vjp(g, need):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return make(out, (a,), vjp)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Var:
    """Normalise over the last axis, then scale and shift."""
    x, gamma, beta = as_var(x), as_var(gamma), as_var(beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def vjp(g, need):
        gx = ggamma = gbeta = None
        if need[0]:
            dxhat = g * gd
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        if need[1]:
            ggamma = unbroadcast(g * xhat, gd.shape)
        if need[2]:
            gbeta = unbroadcast(g, beta.shape)
        return gx, ggamma, gbeta

    return make(xhat * gd + beta.data, (x, gamma, beta), vjp)


def cross_entropy(logits, labels) -> Var:
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` (B x K)."""
    logits = as_var(logits)
    x = logits.data
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise ShapeMismatch(f"logits {x.shape} vs labels {labels.shape}")
    n = x.shape[0]
    shifted = x - x.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()

    def vjp(g, need):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (float(g) / n),)

    return make(np.asarray(loss), (logits,), vjp)


# convolution ------------------------------------------------------------------

def depthwise_conv(x, w, axis: int = -3) -> Var:
    """Per-channel 1-D cross-correlation along ``axis`` with zero 'same' padding.

    ``x`` has channels last; ``w`` has shape (channels, kernel).
    """
    x, w = as_var(x), as_var(w)
    xd, wd = x.data, w.data
    channels, kernel = wd.shape
    if kernel % 2 == 0:
        raise EvenKernel(f"kernel must be odd, got {kernel}")
    axis = axis % xd.ndim
    length = xd.shape[axis]
    if kernel > length:
        raise KernelTooLarge(f"kernel {kernel} exceeds axis length {length}")
    if xd.shape[-1] != channels:
        raise ShapeMismatch(f"x has {xd.shape[-1]} channels, weights expect {channels}")
    half = kernel // 2
    xm = np.moveaxis(xd, axis, 0)
    pad = np.zeros((length + 2 * half,) + xm.shape[1:])
    pad[half:half + length] = xm
    out = np.zeros_like(xm)
    for j in range(kernel):
        out += pad[j:j + length] * wd[:, j]

    def vjp(g, need):
        gm = np.moveaxis(g, axis, 0)
        gx = gw = None
        if need[0]:
            gpad = np.zeros_like(pad)
            for j in range(kernel):
                gpad[j:j + length] += gm * wd[:, j]
            gx = np.moveaxis(gpad[half:half + length], 0, axis)
        if need[1]:
            gw = np.empty_like(wd)
            flat_g = gm.reshape(-1, channels)
            for j in range(kernel):
                gw[:, j] = (pad[j:j + length].reshape(-1, channels) * flat_g).sum(axis=0)
        return gx, gw

    return make(np.moveaxis(out, 0, axis), (x, w), vjp)
