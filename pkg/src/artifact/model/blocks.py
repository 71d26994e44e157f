"""Frozen transformer block, Point Video Adapter, Spatial Context Encoder, and
the four adapter placements.

Tokens are (..., T, N, d).  The frozen block is

    Attention(F) = F + MHSA(LN(F))
    FFN(G)       = MLP(LN(G))
    block(F)     = F + FFN(Attention(F))

and the bypass placement adds both adapter branches in parallel:
``FFN(Attention(F)) + PVA(F) + SCE(F)`` where ``PVA(X) = X + ...`` carries
the skip connection.  With zero-initialised up-projections every placement
reduces to ``block``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from artifact.errors import ShapeMismatch, UnknownPlacement
from artifact.numcore import ops
from artifact.numcore.layers import activation, dwsep_conv, layer_norm, linear, mlp, softmax_attention
from artifact.numcore.rng import RngState
from artifact.numcore.tensor import Var, as_var

PLACEMENTS = ("bypass", "prepend", "post", "middle")


@dataclass(frozen=True)
class AdapterConfig:
    model_dim: int = 64
    bottleneck: int = 16
    kernel: int = 3
    depth: int = 2
    activation: str = "gelu"
    placement: str = "bypass"
    zero_init_up: bool = True
    conv_axis: str = "temporal"
    pva_bias: bool = False

    def __post_init__(self):
        if self.bottleneck >= self.model_dim:
            raise ValueError(f"bottleneck {self.bottleneck} must be below model width {self.model_dim}")
        if self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        if self.placement not in PLACEMENTS:
            raise UnknownPlacement(f"placement {self.placement!r} not in {PLACEMENTS}")


# initialisation -------------------------------------------------------------------

def _normal(rng: RngState, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)


def init_backbone_block(store, i: int, d: int, rng: RngState, frozen: bool = True) -> None:
    p = f"backbone.{i}"
    store.add(f"{p}.ln1.g", np.ones(d), frozen, "ones")
    store.add(f"{p}.ln1.b", np.zeros(d), frozen, "zeros")
    for proj in ("q", "k", "v", "o"):
        store.add(f"{p}.attn.w{proj}", _normal(rng, (d, d), d), frozen, "normal")
        store.add(f"{p}.attn.b{proj}", np.zeros(d), frozen, "zeros")
    store.add(f"{p}.ln2.g", np.ones(d), frozen, "ones")
    store.add(f"{p}.ln2.b", np.zeros(d), frozen, "zeros")
    store.add(f"{p}.mlp.w1", _normal(rng, (d, 4 * d), d), frozen, "normal")
    store.add(f"{p}.mlp.b1", np.zeros(4 * d), frozen, "zeros")
    store.add(f"{p}.mlp.w2", _normal(rng, (4 * d, d), 4 * d), frozen, "normal")
    store.add(f"{p}.mlp.b2", np.zeros(d), frozen, "zeros")


def init_pva(store, i: int, cfg: AdapterConfig, rng: RngState) -> None:
    d, r, k = cfg.model_dim, cfg.bottleneck, cfg.kernel
    p = f"pva.{i}"
    store.add(f"{p}.w_down", _normal(rng, (d, r), d), False, "normal")
    store.add(f"{p}.w_depth", _normal(rng, (r, k), k), False, "normal")
    store.add(f"{p}.w_point", _normal(rng, (r, r), r), False, "normal")
    up = np.zeros((r, d)) if cfg.zero_init_up else _normal(rng, (r, d), r)
    store.add(f"{p}.w_up", up, False, "zeros" if cfg.zero_init_up else "normal")
    if cfg.pva_bias:
        store.add(f"{p}.b_down", np.zeros(r), False, "zeros")
        store.add(f"{p}.b_point", np.zeros(r), False, "zeros")
        store.add(f"{p}.b_up", np.zeros(d), False, "zeros")


def init_sce(store, i: int, cfg: AdapterConfig, rng: RngState) -> None:
    d = cfg.model_dim
    p = f"sce.{i}"
    store.add(f"{p}.w1", _normal(rng, (d, 4 * d), d), False, "normal")
    store.add(f"{p}.b1", np.zeros(4 * d), False, "zeros")
    w2 = np.zeros((4 * d, d)) if cfg.zero_init_up else _normal(rng, (4 * d, d), 4 * d)
    store.add(f"{p}.w2", w2, False, "zeros" if cfg.zero_init_up else "normal")
    store.add(f"{p}.b2", np.zeros(d), False, "zeros")


def pva_param_count(cfg: AdapterConfig) -> int:
    d, r, k = cfg.model_dim, cfg.bottleneck, cfg.kernel
    biases = (2 * r + d) if cfg.pva_bias else 0
    return d * r + r * k + r * r + r * d + biases


def sce_param_count(d: int) -> int:
    return d * 4 * d + 4 * d + 4 * d * d + d


# frozen sublayers ------------------------------------------------------------------

def _flat_tokens(x: Var) -> tuple[Var, tuple[int, ...]]:
    shape = x.shape
    return ops.reshape(x, (*shape[:-3], shape[-3] * shape[-2], shape[-1])), shape


def attention_sublayer(f, params, i: int, heads: int, literal: bool = False) -> Var:
    f = as_var(f)
    p = f"backbone.{i}"
    x = layer_norm(f, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
    flat, shape = _flat_tokens(x)
    q = linear(flat, params[f"{p}.attn.wq"], params[f"{p}.attn.bq"])
    k = linear(flat, params[f"{p}.attn.wk"], params[f"{p}.attn.bk"])
    v = linear(flat, params[f"{p}.attn.wv"], params[f"{p}.attn.bv"])
    att = linear(softmax_attention(q, k, v, heads), params[f"{p}.attn.wo"], params[f"{p}.attn.bo"])
    att = ops.reshape(att, shape)
    return att if literal else ops.add(f, att)


def ffn_sublayer(g, params, i: int) -> Var:
    p = f"backbone.{i}"
    x = layer_norm(g, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
    return mlp(x, params[f"{p}.mlp.w1"], params[f"{p}.mlp.b1"],
               params[f"{p}.mlp.w2"], params[f"{p}.mlp.b2"], act="gelu")


def reference_block(f, params, i: int, heads: int, literal: bool = False) -> Var:
    f = as_var(f)
    return ops.add(f, ffn_sublayer(attention_sublayer(f, params, i, heads, literal), params, i))


# adapters ------------------------------------------------------------------

def pva_forward(x, cfg: AdapterConfig, params, prefix: str = "pva.0") -> Var:
    """X + f(DWConv(X W_down)) W_up on (..., T, N, d) tokens."""
    x = as_var(x)
    if x.shape[-1] != cfg.model_dim:
        raise ShapeMismatch(f"token width {x.shape[-1]} != adapter model_dim {cfg.model_dim}")
    h = linear(x, params[f"{prefix}.w_down"], params.get(f"{prefix}.b_down"))
    h = dwsep_conv(h, cfg.kernel, params[f"{prefix}.w_depth"], params[f"{prefix}.w_point"],
                   axis=cfg.conv_axis)
    if f"{prefix}.b_point" in params:
        h = ops.add(h, params[f"{prefix}.b_point"])
    h = activation(cfg.activation)(h)
    return ops.add(x, linear(h, params[f"{prefix}.w_up"], params.get(f"{prefix}.b_up")))


def sce_forward(x, params, prefix: str = "sce.0", act: str = "gelu") -> Var:
    """Per-block MLP branch d -> 4d -> d."""
    x = as_var(x)
    w1 = params[f"{prefix}.w1"]
    if x.shape[-1] != w1.shape[0]:
        raise ShapeMismatch(f"token width {x.shape[-1]} != SCE input width {w1.shape[0]}")
    return mlp(x, w1, params[f"{prefix}.b1"], params[f"{prefix}.w2"], params[f"{prefix}.b2"], act=act)


def block_forward(f, i: int, params, heads: int, adapter: AdapterConfig | None = None,
                  use_pva: bool = True, use_sce: bool = True, literal: bool = False) -> Var:
    """One backbone layer, adapted when ``adapter`` is given and ``i < adapter.depth``."""
    f = as_var(f)
    adapted = adapter is not None and i < adapter.depth and (use_pva or use_sce)
    if not adapted:
        return reference_block(f, params, i, heads, literal)
    if adapter.placement not in PLACEMENTS:
        raise UnknownPlacement(f"placement {adapter.placement!r} not in {PLACEMENTS}")

    def branches(x):
        out = pva_forward(x, adapter, params, f"pva.{i}") if use_pva else x
        if use_sce:
            out = ops.add(out, sce_forward(x, params, f"sce.{i}", adapter.activation))
        return out

    placement = adapter.placement
    if placement == "bypass":
        main = ffn_sublayer(attention_sublayer(f, params, i, heads, literal), params, i)
        out = ops.add(main, branches(f))
    elif placement == "prepend":
        g = ops.add(f, sce_forward(f, params, f"sce.{i}", adapter.activation)) if use_sce else f
        g = pva_forward(g, adapter, params, f"pva.{i}") if use_pva else g
        out = reference_block(g, params, i, heads, literal)
    elif placement == "post":
        out = branches(reference_block(f, params, i, heads, literal))
    else:  # middle
        a = branches(attention_sublayer(f, params, i, heads, literal))
        out = ops.add(f, ffn_sublayer(a, params, i))
    if out.shape != f.shape:
        raise ShapeMismatch(f"block changed token shape {f.shape} -> {out.shape}")
    return out
