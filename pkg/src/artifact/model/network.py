"""Full classifier: tube embedder -> (adapted) frozen backbone -> head."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from artifact.numcore import ops
from artifact.numcore.layers import dropout, linear
from artifact.numcore.rng import RngState
from artifact.numcore.tensor import Var, as_var
from artifact.model.blocks import (
    AdapterConfig,
    block_forward,
    init_backbone_block,
    init_pva,
    init_sce,
)
from artifact.model.embed import (
    DISPLACEMENT_CHANNELS,
    EmbedderConfig,
    embed_static,
    encode_neighborhoods,
    init_point_mlp,
)
from artifact.model.params import ParamStore

BN_EPS = 1e-5

# architecture toggles: (point align embedder, spatial context encoder, video adapter)
TOGGLES = {
    "A0": (False, False, False),
    "A1": (True, False, False),
    "A2": (True, True, False),
    "A3": (True, False, True),
    "A4": (True, True, True),
}


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    embed: EmbedderConfig = field(default_factory=EmbedderConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    depth: int = 2
    heads: int = 4
    use_pae: bool = True
    use_sce: bool = True
    use_pva: bool = True
    dropout: float = 0.5
    eq4_literal: bool = False

    def __post_init__(self):
        if self.embed.embed_dim != self.adapter.model_dim:
            raise ValueError("embedder width must equal the backbone token width")
        if self.adapter.depth > self.depth:
            raise ValueError(f"cannot adapt {self.adapter.depth} of {self.depth} blocks")

    @property
    def width(self) -> int:
        return self.adapter.model_dim

    def with_toggle(self, name: str) -> "ModelConfig":
        pae, sce, pva = TOGGLES[name]
        return replace(self, use_pae=pae, use_sce=sce, use_pva=pva)


def build_model(cfg: ModelConfig, rng: RngState) -> ParamStore:
    """Fresh parameters; backbone and 3D embedder frozen, the rest per toggles."""
    store = ParamStore()
    e = cfg.width
    init_point_mlp(store, "embed_s.mlp", 3, cfg.embed.hidden, e, rng.child("embed_s"), frozen=True)
    init_point_mlp(store, "embed_d.mlp", DISPLACEMENT_CHANNELS, cfg.embed.hidden, e,
                   rng.child("embed_d"), frozen=not cfg.use_pae)
    for i in range(cfg.depth):
        init_backbone_block(store, i, e, rng.child("backbone", i), frozen=True)
    for i in range(cfg.adapter.depth):
        if cfg.use_pva:
            init_pva(store, i, cfg.adapter, rng.child("pva", i))
    for i in range(cfg.adapter.depth):
        if cfg.use_sce:
            init_sce(store, i, cfg.adapter, rng.child("sce", i))
    head_rng = rng.child("head")
    store.add("head.bn.g", np.ones(e), False, "ones")
    store.add("head.bn.b", np.zeros(e), False, "zeros")
    store.add("head.bn.mean", np.zeros(e), init="zeros", buffer=True)
    store.add("head.bn.var", np.ones(e), init="ones", buffer=True)
    store.add("head.w", head_rng.normal(0.0, 1.0 / np.sqrt(e), size=(e, cfg.num_classes)), False, "normal")
    store.add("head.b", np.zeros(cfg.num_classes), False, "zeros")
    return store


def head_param_names(store: ParamStore) -> list[str]:
    return store.names("head.")


def embed_tokens(disp, params) -> Var:
    return encode_neighborhoods(disp, params, "embed_d")


def clip_embedding(disp, params) -> Var:
    """One vector per clip: token average of the tube embedding, (B, e)."""
    return ops.mean(embed_tokens(disp, params), axis=(-3, -2))


def static_embedding(clouds: np.ndarray, params) -> np.ndarray:
    return embed_static(clouds, params, "embed_s").data


def backbone_forward(tokens, params, cfg: ModelConfig, adapted: bool = True) -> Var:
    x = tokens
    for i in range(cfg.depth):
        x = block_forward(x, i, params, cfg.heads, cfg.adapter if adapted else None,
                          use_pva=cfg.use_pva, use_sce=cfg.use_sce, literal=cfg.eq4_literal)
    return x


def batch_norm(x, params, prefix: str, training: bool, stats: dict | None = None) -> Var:
    """Per-feature standardisation over the batch (training) or running stats.

    In training mode the biased batch mean and variance are also written to
    ``stats`` when it is given.
    """
    x = as_var(x)
    if training:
        mu = ops.mean(x, axis=0)
        c = ops.sub(x, mu)
        var = ops.mean(ops.mul(c, c), axis=0)
        if stats is not None:
            stats[prefix] = (mu.data.copy(), var.data.copy())
        xhat = ops.div(c, ops.sqrt(ops.add(var, BN_EPS)))
    else:
        mean, var = as_var(params[f"{prefix}.mean"]).data, as_var(params[f"{prefix}.var"]).data
        xhat = ops.mul(ops.sub(x, mean), 1.0 / np.sqrt(var + BN_EPS))
    return ops.add(ops.mul(xhat, params[f"{prefix}.g"]), params[f"{prefix}.b"])


def head_forward(tokens, params, cfg: ModelConfig, rng: RngState | None = None,
                 training: bool = False, stats: dict | None = None) -> Var:
    pooled = ops.mean(tokens, axis=(-3, -2))
    pooled = batch_norm(pooled, params, "head.bn", training, stats)
    pooled = dropout(pooled, cfg.dropout, rng, training)
    return linear(pooled, params["head.w"], params["head.b"])


def pooled_features(disp: np.ndarray, params, cfg: ModelConfig, batch_size: int = 64) -> np.ndarray:
    """Head input before normalisation, (N, e), computed batch by batch."""
    parts = []
    for start in range(0, disp.shape[0], batch_size):
        tokens = backbone_forward(embed_tokens(disp[start:start + batch_size], params), params, cfg)
        parts.append(ops.mean(tokens, axis=(-3, -2)).data)
    return np.concatenate(parts) if parts else np.zeros((0, cfg.width))


def refresh_norm_stats(store: ParamStore, pooled: np.ndarray, prefix: str = "head.bn") -> None:
    """Set the normalisation buffers to the exact statistics of ``pooled``."""
    store.set_buffer(f"{prefix}.mean", pooled.mean(axis=0))
    store.set_buffer(f"{prefix}.var", pooled.var(axis=0))


def logits_from_pooled(pooled: np.ndarray, params, cfg: ModelConfig) -> np.ndarray:
    x = batch_norm(pooled, params, "head.bn", training=False)
    return linear(x, params["head.w"], params["head.b"]).data


def forward(disp, params, cfg: ModelConfig, rng: RngState | None = None,
            training: bool = False, adapted: bool = True, stats: dict | None = None) -> Var:
    """Logits (B, K) from displacement features (B, T', A, L*k, 4)."""
    tokens = embed_tokens(disp, params)
    return head_forward(backbone_forward(tokens, params, cfg, adapted), params, cfg, rng, training, stats)


def predict(disp: np.ndarray, params, cfg: ModelConfig, batch_size: int = 64) -> np.ndarray:
    preds = []
    for start in range(0, disp.shape[0], batch_size):
        logits = forward(disp[start:start + batch_size], params, cfg).data
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
