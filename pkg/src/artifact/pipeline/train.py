"""Two-stage training: align the 4D embedder to the static embedding set, then
adapt embedder, adapters and head on the clip classification task.

Stage-1 gradients follow the envelope rule.  Transport plans (outer and, for
the exact label distance, inner) are solved numerically on the current
features and then held fixed while the transport cost is rebuilt on the tape
as a function of the features.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from artifact.errors import EmptyDataset, NonFiniteLoss
from artifact.model.embed import build_neighborhoods
from artifact.model.network import (
    ModelConfig,
    clip_embedding,
    forward,
    logits_from_pooled,
    pooled_features,
    predict,
    refresh_norm_stats,
)
from artifact.model.params import ParamStore
from artifact.numcore import ops
from artifact.numcore.rng import RngState
from artifact.numcore.tensor import Tape, Var, as_var, backward
from artifact.otdd import (
    LabeledEmbeddingSet,
    class_weights,
    cka,
    mean_euclidean,
    mmd,
    otdd_class_weighted_stochastic,
)
from artifact.pipeline.metrics import EpochRecord, MetricLog
from artifact.pipeline.optim import SGD
from artifact.pipeline.schedule import TrainSchedule, lr_at

STAGE1_METRICS = ("otdd", "mmd", "euclid", "cka")


@dataclass(frozen=True)
class AlignSettings:
    metric: str = "otdd"
    b: int = 32
    R: int = 1
    p: float = 2.0
    epsilon: float = 0.1
    inner: str = "gaussian"
    max_iter: int = 2000
    tol: float = 1e-6
    normalize_cost: bool = False
    mmd_bandwidth: float = 1.0

    def __post_init__(self):
        if self.metric not in STAGE1_METRICS:
            raise ValueError(f"stage-1 metric must be one of {STAGE1_METRICS}, got {self.metric!r}")

    def otdd_kwargs(self) -> dict:
        return dict(b=self.b, R=self.R, p=self.p, epsilon=self.epsilon, inner=self.inner,
                    max_iter=self.max_iter, tol=self.tol, normalize_cost=self.normalize_cost)


@dataclass
class EncodedClips:
    """Displacement features (N, T', A, L*k, 4) ready for the embedder MLP."""

    disp: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self) -> int:
        return self.labels.size


def encode_clips(clips: np.ndarray, labels, num_classes: int, cfg: ModelConfig,
                 rng: RngState) -> EncodedClips:
    disp = build_neighborhoods(clips, cfg.embed, rng)
    return EncodedClips(disp, np.asarray(labels, dtype=np.int64), num_classes)


def apply_delta(params: ParamStore, delta: dict[str, np.ndarray]) -> None:
    for name, value in delta.items():
        if params.is_buffer(name):
            params.set_buffer(name, value)
        else:
            params.assign(name, value)


def _batches(n: int, size: int, rng: RngState):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def embed_all(data: EncodedClips, params, batch_size: int = 64) -> np.ndarray:
    parts = [clip_embedding(data.disp[i:i + batch_size], params).data
             for i in range(0, len(data), batch_size)]
    return np.concatenate(parts)


# stage-1 surrogates -------------------------------------------------------------

def _sq_dists(x: Var, y) -> Var:
    """(n, m) squared distances between the rows of ``x`` and of ``y``."""
    y = as_var(y)
    diff = ops.sub(ops.reshape(x, (x.shape[0], 1, x.shape[1])), ops.reshape(y, (1, y.shape[0], y.shape[1])))
    return ops.sum(ops.mul(diff, diff), axis=-1)


def _pow_half(sq: Var, p: float) -> Var:
    # ||.||^p from squared norms; p == 2 keeps it exact
    return sq if p == 2.0 else ops.power(ops.add(sq, 0.0), p / 2.0)


def _root(v: Var, p: float) -> Var:
    if v.data <= 0.0:
        return ops.mul(v, 0.0)
    return ops.sqrt(v) if p == 2.0 else ops.power(v, 1.0 / p)


def _label_term(xr: Var, stat: LabeledEmbeddingSet, solve, p: float, inner: str) -> Var:
    """d_Y^p between the (one-class) subsample and every static class, (K_s,)."""
    terms = []
    if inner == "gaussian":
        m1 = ops.mean(xr, axis=0)
        c = ops.sub(xr, m1)
        sd1 = ops.sqrt(ops.mean(ops.mul(c, c), axis=0))
        for j in range(stat.num_classes):
            fj = stat.features[stat.members(j)]
            m2 = fj.mean(axis=0)
            sd2 = np.sqrt(((fj - m2) ** 2).mean(axis=0))
            dm, ds = ops.sub(m1, m2), ops.sub(sd1, sd2)
            sq = ops.add(ops.sum(ops.mul(dm, dm)), ops.sum(ops.mul(ds, ds)))
            terms.append(ops.reshape(_pow_half(sq, p), (1,)))
    else:
        for j in range(stat.num_classes):
            fj = stat.features[stat.members(j)]
            plan = solve.inner_plans[0, j].plan
            terms.append(ops.reshape(ops.sum(ops.mul(plan, _pow_half(_sq_dists(xr, fj), p))), (1,)))
    return ops.concat(terms, axis=0)


def otdd_surrogate(x: Var, labels: np.ndarray, stat: LabeledEmbeddingSet, settings: AlignSettings,
                   weights: np.ndarray, rng: RngState) -> tuple[Var, float]:
    """Envelope-rule surrogate of the class-weighted stochastic estimate.

    Classes absent from the batch are dropped and the dataset-level weights
    renormalised over those present.  Returns (tape loss, numeric estimate).
    """
    present = np.unique(labels)
    remap = np.searchsorted(present, labels)
    w = weights[present] / weights[present].sum()
    batch = LabeledEmbeddingSet(x.data, remap, present.size)
    solves: list = []
    est = otdd_class_weighted_stochastic(batch, stat, rng=rng, weights=w, solves=solves,
                                         **settings.otdd_kwargs())
    p = settings.p
    per_class: dict[int, list[Var]] = {}
    for cls, rows, solve in solves:
        xr = ops.take(x, rows)
        label_p = _label_term(xr, stat, solve, p, settings.inner)
        cost_p = ops.add(_pow_half(_sq_dists(xr, stat.features), p), ops.take(label_p, stat.labels))
        value = _root(ops.sum(ops.mul(solve.plan.plan, cost_p)), p)
        per_class.setdefault(cls, []).append(value)
    loss = None
    for cls, vals in per_class.items():
        term = ops.mul(vals[0] if len(vals) == 1 else ops.mean(ops.concat(
            [ops.reshape(v, (1,)) for v in vals]), axis=0), float(w[cls]))
        loss = term if loss is None else ops.add(loss, term)
    return loss, est.d


def mmd_surrogate(x: Var, stat: np.ndarray, bandwidth: float) -> Var:
    gamma = 1.0 / (2.0 * bandwidth ** 2)
    kxx = ops.mean(ops.exp(ops.mul(_sq_dists(x, x), -gamma)))
    kxy = ops.mean(ops.exp(ops.mul(_sq_dists(x, stat), -gamma)))
    kyy = float(np.exp(-gamma * ((stat[:, None] - stat[None]) ** 2).sum(-1)).mean())
    sq = ops.add(ops.sub(kxx, ops.mul(kxy, 2.0)), kyy)
    return _root(sq, 2.0)


def euclid_surrogate(x: Var, stat: np.ndarray) -> Var:
    d = ops.sub(ops.mean(x, axis=0), stat.mean(axis=0))
    return _root(ops.sum(ops.mul(d, d)), 2.0)


def cka_surrogate(x: Var, stat: np.ndarray, rng: RngState) -> Var:
    """1 - linear CKA against a random static subset of matching size."""
    y = stat[np.sort(rng.choice(stat.shape[0], size=min(x.shape[0], stat.shape[0]), replace=False))]
    x = ops.take(x, np.arange(y.shape[0]))
    xc = ops.sub(x, ops.mean(x, axis=0))
    yc = y - y.mean(axis=0)
    cross = ops.matmul(yc.T, xc)
    gram = ops.matmul(ops.swapaxes(xc, 0, 1), xc)
    hsic = ops.sum(ops.mul(cross, cross))
    norm_x = ops.sqrt(ops.sum(ops.mul(gram, gram)))
    norm_y = float(np.linalg.norm(yc.T @ yc))
    return ops.sub(1.0, ops.div(hsic, ops.mul(norm_x, norm_y)))


def alignment_value(features: np.ndarray, labels: np.ndarray, stat: LabeledEmbeddingSet,
                    settings: AlignSettings, rng: RngState, num_classes: int) -> float:
    """Numeric value of the stage-1 metric on a full feature set."""
    if settings.metric == "otdd":
        dyn = LabeledEmbeddingSet(features, labels, num_classes)
        return otdd_class_weighted_stochastic(dyn, stat, rng=rng, **settings.otdd_kwargs()).d
    if settings.metric == "mmd":
        return mmd(features, stat.features, settings.mmd_bandwidth)
    if settings.metric == "euclid":
        return mean_euclidean(features, stat.features)
    y = stat.features[np.sort(rng.choice(len(stat), size=min(len(features), len(stat)), replace=False))]
    return 1.0 - cka(features[: y.shape[0]], y)


# stage 1 -------------------------------------------------------------------------

def stage1_align(train: EncodedClips, stat: LabeledEmbeddingSet, params: ParamStore,
                 cfg: ModelConfig, settings: AlignSettings, schedule: TrainSchedule,
                 rng: RngState) -> tuple[dict[str, np.ndarray], MetricLog]:
    """Minimise the alignment metric w.r.t. the 4D embedder only.

    Returns the updated embedder tensors and one record per epoch holding the
    mean minibatch loss and the full-training-set distance estimate (same
    evaluation stream every epoch).
    """
    log = MetricLog()
    if len(train) == 0:
        raise EmptyDataset("stage 1 needs at least one training clip")
    work = params.copy()
    names = [n for n in work.names("embed_d.") if not work.is_frozen(n)]
    if schedule.stage1_epochs == 0 or not names:
        return {}, log
    for n in work.trainable_names():
        if n not in names:
            work.entry(n).frozen = True
    opt = SGD(work, {"embedder": names}, momentum=schedule.momentum)
    weights = class_weights(train.labels, train.num_classes)
    eval_rng_seed = rng.child("eval")
    good = {n: work[n].copy() for n in names}
    for epoch in range(schedule.stage1_epochs):
        t0 = time.perf_counter()
        losses = []
        for step, idx in enumerate(_batches(len(train), schedule.batch_size, rng.child("shuffle", epoch))):
            tape = Tape()
            bound = work.bind(tape, names)
            x = clip_embedding(train.disp[idx], bound)
            step_rng = rng.child("step", epoch, step)
            if settings.metric == "otdd":
                loss, _ = otdd_surrogate(x, train.labels[idx], stat, settings, weights, step_rng)
            elif settings.metric == "mmd":
                loss = mmd_surrogate(x, stat.features, settings.mmd_bandwidth)
            elif settings.metric == "euclid":
                loss = euclid_surrogate(x, stat.features)
            else:
                loss = cka_surrogate(x, stat.features, step_rng)
            value = loss.item()
            if not np.isfinite(value):
                for n in names:
                    work.assign(n, good[n])
                err = NonFiniteLoss(f"stage-1 loss became {value} at epoch {epoch}, step {step}")
                err.state = {n: good[n].copy() for n in names}
                raise err
            losses.append(value)
            if loss.tracked:
                opt.step(backward(tape, loss), schedule.stage1_lr)
            good = {n: work[n].copy() for n in names}
        feats = embed_all(train, work)
        est = otdd_class_weighted_stochastic(
            LabeledEmbeddingSet(feats, train.labels, train.num_classes), stat,
            rng=RngState(eval_rng_seed.seed, eval_rng_seed.key), **settings.otdd_kwargs()).d
        log.append(EpochRecord(stage=1, epoch=epoch, train_loss=float(np.mean(losses)),
                               otdd_estimate=est, lr=schedule.stage1_lr,
                               wall_ms=1e3 * (time.perf_counter() - t0)))
    return {n: work[n].copy() for n in names}, log


# stage 2 -------------------------------------------------------------------------

def accuracy(data: EncodedClips, params, cfg: ModelConfig) -> float:
    if len(data) == 0:
        return float("nan")
    return float(np.mean(predict(data.disp, params, cfg) == data.labels))


def stage2_adapt(train: EncodedClips, test: EncodedClips | None, params: ParamStore,
                 cfg: ModelConfig, schedule: TrainSchedule,
                 rng: RngState) -> tuple[dict[str, np.ndarray], MetricLog]:
    """Cross-entropy fine-tuning of every trainable tensor (embedder, adapters, head)."""
    if len(train) == 0:
        raise EmptyDataset("stage 2 needs at least one training clip")
    log = MetricLog()
    if schedule.stage2_epochs == 0:
        return {}, log
    work = params.copy()
    opt = SGD(work, momentum=schedule.momentum)
    names = opt.names
    good = {n: work[n].copy() for n in names}
    for epoch in range(schedule.stage2_epochs):
        t0 = time.perf_counter()
        lr = lr_at(schedule, epoch)
        losses = []
        for step, idx in enumerate(_batches(len(train), schedule.batch_size, rng.child("shuffle", epoch))):
            tape = Tape()
            bound = work.bind(tape, names)
            logits = forward(train.disp[idx], bound, cfg, rng.child("dropout", epoch, step), training=True)
            loss = ops.cross_entropy(logits, train.labels[idx])
            value = loss.item()
            if not np.isfinite(value):
                for n in names:
                    work.assign(n, good[n])
                err = NonFiniteLoss(f"stage-2 loss became {value} at epoch {epoch}, step {step}")
                err.state = {n: good[n].copy() for n in names}
                raise err
            losses.append(value)
            opt.step(backward(tape, loss), lr)
            good = {n: work[n].copy() for n in names}
        # exact full-training-set statistics for the eval-mode normalisation
        pooled = pooled_features(train.disp, work, cfg)
        refresh_norm_stats(work, pooled)
        train_acc = float(np.mean(np.argmax(logits_from_pooled(pooled, work, cfg), axis=1) == train.labels))
        log.append(EpochRecord(
            stage=2, epoch=epoch, train_loss=float(np.mean(losses)), train_acc=train_acc,
            test_acc=None if test is None else accuracy(test, work, cfg),
            lr=lr, wall_ms=1e3 * (time.perf_counter() - t0)))
    return {n: work[n].copy() for n in names + work.buffer_names()}, log
