"""Point embedders: a mini-PointNet for static clouds and a P4DConv-style tube
embedder for point-cloud video.

Neighbourhood construction (anchor sampling, ball query) depends only on the
input coordinates, so it is done once in numpy; only the shared MLP and the
max-pool live on the tape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from artifact.errors import ClipTooShort, EmptyCloud, ShapeMismatch, TooFewPoints
from artifact.numcore import ops
from artifact.numcore.layers import linear
from artifact.numcore.rng import RngState
from artifact.numcore.tensor import Var

DISPLACEMENT_CHANNELS = 4


@dataclass(frozen=True)
class EmbedderConfig:
    num_anchors: int = 16
    spatial_radius: float = 0.5
    neighbors_k: int = 8
    tube_length: int = 3
    anchor_stride: int = 2
    embed_dim: int = 64
    hidden_dim: int = 0  # 0 means embed_dim // 2

    def __post_init__(self):
        if self.tube_length < 1 or self.tube_length % 2 == 0:
            raise ValueError(f"tube_length must be odd, got {self.tube_length}")
        if self.anchor_stride < 1 or self.neighbors_k < 1 or self.num_anchors < 1:
            raise ValueError("anchor_stride, neighbors_k and num_anchors must be >= 1")

    @property
    def hidden(self) -> int:
        return self.hidden_dim or max(1, self.embed_dim // 2)

    def anchor_frames(self, frames: int) -> np.ndarray:
        return np.arange(0, frames, self.anchor_stride)


def _glorot(rng: RngState, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


def init_point_mlp(store, prefix: str, in_dim: int, hidden: int, out_dim: int,
                   rng: RngState, frozen: bool) -> None:
    store.add(f"{prefix}.w1", _glorot(rng, in_dim, hidden), frozen, "glorot")
    store.add(f"{prefix}.b1", np.zeros(hidden), frozen, "zeros")
    store.add(f"{prefix}.w2", _glorot(rng, hidden, out_dim), frozen, "glorot")
    store.add(f"{prefix}.b2", np.zeros(out_dim), frozen, "zeros")


def point_mlp(x, params, prefix: str) -> Var:
    h = ops.relu(linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return linear(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


# sampling and grouping ------------------------------------------------------------

def farthest_point_sampling(points: np.ndarray, count: int, start: np.ndarray | int = 0) -> np.ndarray:
    """Indices of ``count`` farthest-point samples per cloud.

    ``points`` is (..., P, 3); ``start`` gives the first index per cloud.  Ties
    go to the lowest index.
    """
    pts = np.asarray(points, dtype=np.float64)
    lead = pts.shape[:-2]
    flat = pts.reshape(-1, pts.shape[-2], pts.shape[-1])
    m, p, _ = flat.shape
    if count > p:
        raise TooFewPoints(f"cannot pick {count} anchors from {p} points")
    start = np.broadcast_to(np.asarray(start, dtype=np.intp), lead).reshape(-1)
    rows = np.arange(m)
    chosen = np.empty((m, count), dtype=np.intp)
    chosen[:, 0] = start
    nearest = ((flat - flat[rows, start][:, None, :]) ** 2).sum(-1)
    for c in range(1, count):
        nxt = np.argmax(nearest, axis=1)
        chosen[:, c] = nxt
        d = ((flat - flat[rows, nxt][:, None, :]) ** 2).sum(-1)
        nearest = np.minimum(nearest, d)
    return chosen.reshape(*lead, count)


def ball_query(anchors: np.ndarray, points: np.ndarray, radius: float, k: int):
    """First ``k`` point indices (by index order) within ``radius`` of each anchor.

    ``anchors`` is (M, A, 3), ``points`` (M, P, 3).  Returns (idx, count) where
    short neighbourhoods repeat their first hit and ``count`` may be zero.
    """
    d2 = ((anchors[:, :, None, :] - points[:, None, :, :]) ** 2).sum(-1)
    inside = d2 <= radius * radius
    order = np.argsort(~inside, axis=-1, kind="stable")[..., :k]
    count = np.minimum(inside.sum(-1), k)
    slot = np.arange(order.shape[-1])
    idx = np.where(slot < count[..., None], order, order[..., :1])
    return idx, count


def build_neighborhoods(clips: np.ndarray, cfg: EmbedderConfig, rng: RngState) -> np.ndarray:
    """Displacement features (B, T', A, tube*k, 4) for a batch of clips (B, T, P, 3).

    One farthest-point start index is drawn per clip and shared by its anchor
    frames.  Tube frames past either end replicate the boundary frame.  An
    empty ball falls back to the anchor itself, i.e. an all-zero feature.
    """
    clips = np.asarray(clips, dtype=np.float64)
    if clips.ndim == 3:
        clips = clips[None]
    if clips.ndim != 4 or clips.shape[-1] != 3:
        raise ShapeMismatch(f"clips must be (B, T, P, 3), got {clips.shape}")
    bsz, frames, npts, _ = clips.shape
    if frames < cfg.tube_length:
        raise ClipTooShort(f"{frames} frames shorter than tube length {cfg.tube_length}")
    if npts < cfg.num_anchors:
        raise TooFewPoints(f"{npts} points but {cfg.num_anchors} anchors requested")
    t_anchor = cfg.anchor_frames(frames)
    starts = rng.integers(0, npts, size=bsz)
    anchor_pts = clips[:, t_anchor]                                     # B, T', P, 3
    idx = farthest_point_sampling(anchor_pts, cfg.num_anchors,
                                  np.repeat(starts[:, None], t_anchor.size, axis=1))
    anchors = np.take_along_axis(anchor_pts, idx[..., None], axis=2)    # B, T', A, 3
    half = cfg.tube_length // 2
    k = min(cfg.neighbors_k, npts)
    m = bsz * t_anchor.size
    flat_anchors = anchors.reshape(m, cfg.num_anchors, 3)
    groups = []
    for offset in range(-half, half + 1):
        tf = np.clip(t_anchor + offset, 0, frames - 1)
        pts = clips[:, tf].reshape(m, npts, 3)
        nb, count = ball_query(flat_anchors, pts, cfg.spatial_radius, k)
        gathered = np.take_along_axis(pts[:, None, :, :], nb[..., None], axis=2)   # m, A, k, 3
        disp = gathered - flat_anchors[:, :, None, :]
        feat = np.concatenate([disp, np.full(disp.shape[:-1] + (1,), float(offset))], axis=-1)
        feat[count == 0] = 0.0
        groups.append(feat)
    out = np.concatenate(groups, axis=2)
    return out.reshape(bsz, t_anchor.size, cfg.num_anchors, -1, DISPLACEMENT_CHANNELS)


def encode_neighborhoods(disp, params, prefix: str = "embed_d") -> Var:
    """Shared MLP on displacement features, max-pooled per anchor -> (..., A, e)."""
    return ops.max(point_mlp(disp, params, f"{prefix}.mlp"), axis=-2)


def embed_dynamic(clip: np.ndarray, cfg: EmbedderConfig, params, rng: RngState,
                  prefix: str = "embed_d") -> Var:
    """Tube embedding of one clip (T, P, 3) -> tokens (T', A, e)."""
    disp = build_neighborhoods(np.asarray(clip)[None], cfg, rng)
    return ops.reshape(encode_neighborhoods(disp, params, prefix), (disp.shape[1], cfg.num_anchors, -1))


def embed_static(cloud: np.ndarray, params, prefix: str = "embed_s",
                 cfg: EmbedderConfig | None = None, rng: RngState | None = None) -> Var:
    """Mini-PointNet embedding of a cloud (P, 3) or batch (B, P, 3).

    Global mode returns (1, e) per cloud (B, e for a batch).  With ``cfg`` the
    per-anchor variant pools relative coordinates over ball neighbourhoods of
    farthest-point anchors and returns (A, e) per cloud.
    """
    pts = np.asarray(cloud, dtype=np.float64)
    single = pts.ndim == 2
    if single:
        pts = pts[None]
    if pts.shape[-2] == 0:
        raise EmptyCloud("cloud has no points")
    if cfg is None:
        feats = ops.max(point_mlp(pts, params, f"{prefix}.mlp"), axis=-2)
        return ops.reshape(feats, (1, -1)) if single else feats
    rng = rng or RngState(0)
    starts = rng.integers(0, pts.shape[1], size=pts.shape[0])
    idx = farthest_point_sampling(pts, cfg.num_anchors, starts)
    anchors = np.take_along_axis(pts, idx[..., None], axis=1)
    nb, count = ball_query(anchors, pts, cfg.spatial_radius, min(cfg.neighbors_k, pts.shape[1]))
    rel = np.take_along_axis(pts[:, None], nb[..., None], axis=2) - anchors[:, :, None, :]
    rel[count == 0] = 0.0
    feats = ops.max(point_mlp(rel, params, f"{prefix}.mlp"), axis=-2)
    return ops.reshape(feats, feats.shape[1:]) if single else feats
