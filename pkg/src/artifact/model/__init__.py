"""Embedders, frozen backbone, adapters and parameter bookkeeping."""
from artifact.model.blocks import (
    PLACEMENTS,
    AdapterConfig,
    block_forward,
    pva_forward,
    pva_param_count,
    reference_block,
    sce_forward,
    sce_param_count,
)
from artifact.model.embed import EmbedderConfig, build_neighborhoods, embed_dynamic, embed_static
from artifact.model.network import TOGGLES, ModelConfig, build_model, clip_embedding, forward, predict
from artifact.model.params import (
    ParamStore,
    count_params,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)

__all__ = [
    "PLACEMENTS", "TOGGLES", "AdapterConfig", "EmbedderConfig", "ModelConfig", "ParamStore",
    "block_forward", "build_model", "build_neighborhoods", "clip_embedding", "count_params",
    "embed_dynamic", "embed_static", "forward", "load_checkpoint", "parse_checkpoint",
    "predict", "pva_forward", "pva_param_count", "reference_block", "save_checkpoint",
    "sce_forward", "sce_param_count",
]
