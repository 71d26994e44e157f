"""Central-difference checks of every differentiable building block.

Each check builds a small random instance from a seed, reduces the output to a
scalar with a fixed random projection, and compares tape gradients against
``(f(x + h) - f(x - h)) / 2h`` for every input and parameter entry.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from artifact.model.blocks import AdapterConfig, PLACEMENTS, block_forward, pva_forward, sce_forward
from artifact.model.embed import encode_neighborhoods
from artifact.model.network import batch_norm
from artifact.numcore import layers, ops
from artifact.numcore.rng import RngState
from artifact.numcore.tensor import Tape, backward

STEP = 1e-5
TOLERANCE = 1e-4
SEEDS = tuple(range(10))


@dataclass
class CheckResult:
    name: str
    seed: int
    max_rel_error: float
    worst_input: str

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


NORM_FLOOR = 1e-4


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||, NORM_FLOOR).

    The floor turns the test absolute (1e-8) for gradients that vanish
    identically, such as the attention key bias, whose shift cancels in the
    softmax and leaves only rounding noise on both sides.
    """
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), NORM_FLOOR)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check(fn: Callable[[dict], object], inputs: dict[str, np.ndarray], h: float = STEP,
          rng: RngState | None = None) -> tuple[float, str]:
    """Worst relative error over the named inputs of ``fn`` (a Var-valued map)."""
    rng = rng or RngState(12345)
    tape = Tape()
    leaves = {k: tape.leaf(v, k) for k, v in inputs.items()}
    out = fn(leaves)
    proj = rng.normal(size=out.shape)
    loss = ops.sum(ops.mul(out, proj))
    grads = backward(tape, loss)

    def scalar(values):
        return float((fn(values).data * proj).sum())

    worst, where = 0.0, ""
    for name, value in inputs.items():
        numeric = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            plus = {k: v.copy() for k, v in inputs.items()}
            minus = {k: v.copy() for k, v in inputs.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            numeric[idx] = (scalar(plus) - scalar(minus)) / (2 * h)
        err = rel_error(grads[name], numeric)
        if err > worst or not where:
            worst, where = max(err, worst), name
    return worst, where


# instances --------------------------------------------------------------------

def _n(rng, *shape, scale=1.0):
    return rng.normal(0.0, scale, size=shape)


def _matmul(rng):
    return (lambda v: ops.matmul(v["a"], v["b"])), {"a": _n(rng, 2, 3, 4), "b": _n(rng, 4, 5)}


def _attention(rng):
    inputs = {"q": _n(rng, 5, 4), "k": _n(rng, 5, 4), "v": _n(rng, 5, 4)}
    return (lambda v: layers.softmax_attention(v["q"], v["k"], v["v"], heads=2)), inputs


def _layer_norm(rng):
    inputs = {"x": _n(rng, 3, 6), "g": _n(rng, 6), "b": _n(rng, 6)}
    return (lambda v: layers.layer_norm(v["x"], v["g"], v["b"])), inputs


def _dwsep_conv(rng):
    inputs = {"x": _n(rng, 4, 3, 5), "wd": _n(rng, 5, 3), "wp": _n(rng, 5, 5)}
    return (lambda v: layers.dwsep_conv(v["x"], 3, v["wd"], v["wp"])), inputs


def _adapter_cfg(depth=1, placement="bypass"):
    return AdapterConfig(model_dim=6, bottleneck=3, kernel=3, depth=depth, placement=placement,
                         zero_init_up=False)


def _pva(rng):
    inputs = {"x": _n(rng, 4, 3, 6), "pva.0.w_down": _n(rng, 6, 3), "pva.0.w_depth": _n(rng, 3, 3),
              "pva.0.w_point": _n(rng, 3, 3), "pva.0.w_up": _n(rng, 3, 6)}
    cfg = _adapter_cfg()
    return (lambda v: pva_forward(v["x"], cfg, v, "pva.0")), inputs


def _sce(rng):
    inputs = {"x": _n(rng, 3, 2, 4), "sce.0.w1": _n(rng, 4, 16, scale=0.5), "sce.0.b1": _n(rng, 16),
              "sce.0.w2": _n(rng, 16, 4, scale=0.5), "sce.0.b2": _n(rng, 4)}
    return (lambda v: sce_forward(v["x"], v, "sce.0")), inputs


def _block_params(rng, d=6):
    p = {"backbone.0.ln1.g": 1 + _n(rng, d, scale=0.1), "backbone.0.ln1.b": _n(rng, d, scale=0.1),
         "backbone.0.ln2.g": 1 + _n(rng, d, scale=0.1), "backbone.0.ln2.b": _n(rng, d, scale=0.1),
         "backbone.0.mlp.w1": _n(rng, d, 4 * d, scale=0.4), "backbone.0.mlp.b1": _n(rng, 4 * d, scale=0.1),
         "backbone.0.mlp.w2": _n(rng, 4 * d, d, scale=0.2), "backbone.0.mlp.b2": _n(rng, d, scale=0.1)}
    for proj in "qkvo":
        p[f"backbone.0.attn.w{proj}"] = _n(rng, d, d, scale=0.4)
        p[f"backbone.0.attn.b{proj}"] = _n(rng, d, scale=0.1)
    p.update({"pva.0.w_down": _n(rng, d, 3, scale=0.4), "pva.0.w_depth": _n(rng, 3, 3, scale=0.5),
              "pva.0.w_point": _n(rng, 3, 3, scale=0.5), "pva.0.w_up": _n(rng, 3, d, scale=0.4),
              "sce.0.w1": _n(rng, d, 4 * d, scale=0.4), "sce.0.b1": _n(rng, 4 * d, scale=0.1),
              "sce.0.w2": _n(rng, 4 * d, d, scale=0.2), "sce.0.b2": _n(rng, d, scale=0.1)})
    return p


def _block(placement):
    def build(rng):
        inputs = {"f": _n(rng, 3, 2, 6), **_block_params(rng)}
        cfg = _adapter_cfg(placement=placement)
        return (lambda v: block_forward(v["f"], 0, v, heads=2, adapter=cfg)), inputs
    return build


def _cross_entropy(rng):
    labels = rng.integers(0, 4, size=5)
    return (lambda v: ops.cross_entropy(v["z"], labels)), {"z": _n(rng, 5, 4)}


def _embedder(rng):
    inputs = {"disp": _n(rng, 2, 3, 6, 4, scale=0.3), "embed_d.mlp.w1": _n(rng, 4, 5),
              "embed_d.mlp.b1": _n(rng, 5, scale=0.1), "embed_d.mlp.w2": _n(rng, 5, 6),
              "embed_d.mlp.b2": _n(rng, 6, scale=0.1)}
    return (lambda v: encode_neighborhoods(v["disp"], v)), inputs


def _batch_norm(rng):
    inputs = {"x": _n(rng, 5, 4), "head.bn.g": 1 + _n(rng, 4, scale=0.1), "head.bn.b": _n(rng, 4)}
    return (lambda v: batch_norm(v["x"], v, "head.bn", training=True)), inputs


CHECKS: dict[str, Callable] = {
    "matmul": _matmul,
    "attention": _attention,
    "layer_norm": _layer_norm,
    "dwsep_conv": _dwsep_conv,
    "pva": _pva,
    "sce": _sce,
    **{f"block_{p}": _block(p) for p in PLACEMENTS},
    "cross_entropy": _cross_entropy,
    "embedder": _embedder,
    "batch_norm": _batch_norm,
}


def run_check(name: str, seed: int, h: float = STEP) -> CheckResult:
    rng = RngState(seed).child("gradcheck", name)
    fn, inputs = CHECKS[name](rng)
    err, where = check(fn, inputs, h, rng.child("proj"))
    return CheckResult(name, seed, err, where)


def run_suite(names=None, seeds=SEEDS, h: float = STEP) -> list[CheckResult]:
    return [run_check(n, s, h) for n in (names or CHECKS) for s in seeds]
