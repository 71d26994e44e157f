"""Neural layer primitives composed from :mod:`artifact.numcore.ops`."""
from __future__ import annotations

import numpy as np

from artifact.errors import DivisibilityError, ShapeMismatch
from artifact.numcore import ops
from artifact.numcore.rng import RngState
from artifact.numcore.tensor import Var, as_var

ACTIVATIONS = {"gelu": ops.gelu, "relu": ops.relu, "tanh": ops.tanh}


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def linear(x, w, b=None) -> Var:
    y = ops.matmul(x, w)
    return y if b is None else ops.add(y, b)


def mlp(x, w1, b1, w2, b2, act: str = "gelu") -> Var:
    return linear(activation(act)(linear(x, w1, b1)), w2, b2)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Var:
    return ops.layer_norm(x, gamma, beta, eps)


def softmax_attention(q, k, v, heads: int, return_weights: bool = False):
    """Multi-head scaled dot-product attention over the second-to-last axis.

    Inputs are (..., n, d).  Each head sees d / heads channels and is scaled by
    1/sqrt(d / heads).
    """
    q, k, v = as_var(q), as_var(k), as_var(v)
    if not (q.shape == k.shape == v.shape):
        raise ShapeMismatch(f"q {q.shape}, k {k.shape}, v {v.shape} must match")
    *lead, n, d = q.shape
    if n < 1:
        raise ShapeMismatch("attention needs at least one token")
    if heads < 1 or d % heads:
        raise DivisibilityError(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    nlead = len(lead)

    def split(t):
        t = ops.reshape(t, (*lead, n, heads, dh))
        return ops.transpose(t, (*range(nlead), nlead + 1, nlead, nlead + 2))

    qh, kh, vh = split(q), split(k), split(v)
    scores = ops.mul(ops.matmul(qh, ops.swapaxes(kh, -1, -2)), 1.0 / np.sqrt(dh))
    weights = ops.softmax(scores, axis=-1)
    out = ops.matmul(weights, vh)
    out = ops.transpose(out, (*range(nlead), nlead + 1, nlead, nlead + 2))
    out = ops.reshape(out, (*lead, n, d))
    return (out, weights.data) if return_weights else out


def dwsep_conv(x, kernel: int, w_depth, w_point, axis: str = "temporal") -> Var:
    """Depth-wise separable convolution on (..., T, N, d) tokens.

    ``axis="temporal"`` convolves every token slot along T independently;
    ``axis="sequence"`` convolves along the flattened T*N token sequence.
    """
    x = as_var(x)
    w_depth = as_var(w_depth)
    if x.ndim < 3:
        raise ShapeMismatch(f"expected (..., T, N, d) tokens, got {x.shape}")
    if w_depth.shape[1] != kernel:
        raise ShapeMismatch(f"depth weights {w_depth.shape} do not match kernel {kernel}")
    if axis == "temporal":
        y = ops.depthwise_conv(x, w_depth, axis=-3)
    elif axis == "sequence":
        *lead, t, n, d = x.shape
        flat = ops.reshape(x, (*lead, t * n, d))
        y = ops.reshape(ops.depthwise_conv(flat, w_depth, axis=-2), x.shape)
    else:
        raise ValueError(f"unknown conv axis {axis!r}")
    return ops.matmul(y, w_point)


def dropout(x, rate: float, rng: RngState | None, training: bool) -> Var:
    """Inverted dropout; the identity outside training."""
    x = as_var(x)
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return ops.mul(x, mask)
