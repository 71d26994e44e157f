"""One end-to-end run from a resolved configuration and a seed."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from artifact.io.config import Config
from artifact.io.formats import ClipSet, CloudSet, read_clips, read_clouds
from artifact.io.synth import gen_synth_dynamic, gen_synth_static
from artifact.model.blocks import AdapterConfig
from artifact.model.embed import EmbedderConfig
from artifact.model.network import ModelConfig, build_model, static_embedding
from artifact.model.params import ParamStore, checkpoint_bytes, count_params
from artifact.numcore.rng import RngState
from artifact.otdd import LabeledEmbeddingSet
from artifact.pipeline.metrics import MetricLog
from artifact.pipeline.schedule import TrainSchedule
from artifact.pipeline.train import AlignSettings, apply_delta, encode_clips, stage1_align, stage2_adapt

STAGES = ("1", "2", "both")


def embedder_config(conf: Config) -> EmbedderConfig:
    return EmbedderConfig(num_anchors=conf["embed.num_anchors"], spatial_radius=conf["embed.radius"],
                          neighbors_k=conf["embed.neighbors_k"], tube_length=conf["embed.tube_length"],
                          anchor_stride=conf["embed.anchor_stride"], embed_dim=conf["embed.dim"])


def adapter_config(conf: Config) -> AdapterConfig:
    return AdapterConfig(model_dim=conf["embed.dim"], bottleneck=conf["adapter.r"],
                         kernel=conf["adapter.kernel"], depth=conf["adapter.depth"],
                         activation=conf["adapter.activation"], placement=conf["adapter.placement"],
                         zero_init_up=conf["adapter.zero_init_up"], conv_axis=conf["adapter.conv_axis"],
                         pva_bias=conf["adapter.pva_bias"])


def model_config(conf: Config, num_classes: int) -> ModelConfig:
    return ModelConfig(num_classes=num_classes, embed=embedder_config(conf), adapter=adapter_config(conf),
                       depth=conf["model.depth"], heads=conf["model.heads"],
                       use_pae=conf["toggle.pae"], use_sce=conf["toggle.sce"], use_pva=conf["toggle.pva"],
                       dropout=conf["schedule.dropout"], eq4_literal=conf["model.eq4_literal"])


def train_schedule(conf: Config) -> TrainSchedule:
    return TrainSchedule(stage1_epochs=conf["schedule.stage1_epochs"],
                         stage2_epochs=conf["schedule.stage2_epochs"],
                         base_lr=conf["schedule.base_lr"], warmup_epochs=conf["schedule.warmup_epochs"],
                         decay_epochs=conf["schedule.decay_epochs"],
                         decay_factor=conf["schedule.decay_factor"], momentum=conf["schedule.momentum"],
                         dropout=conf["schedule.dropout"], batch_size=conf["schedule.batch_size"],
                         stage1_lr=conf["schedule.stage1_lr"])


def align_settings(conf: Config) -> AlignSettings:
    return AlignSettings(metric=conf["otdd.metric"], b=conf["otdd.b"], R=conf["otdd.R"], p=conf["ot.p"],
                         epsilon=conf["ot.epsilon"], inner=conf["otdd.inner"],
                         max_iter=conf["ot.max_iter"], tol=conf["ot.tol"],
                         normalize_cost=conf["ot.normalize_cost"],
                         mmd_bandwidth=conf["otdd.mmd_bandwidth"])


@dataclass
class ExperimentData:
    train: ClipSet
    test: ClipSet
    static: CloudSet


def load_data(conf: Config, rng: RngState) -> ExperimentData:
    """Files named in the config, otherwise synthetic sets drawn from ``rng``."""
    n, t, p, noise = conf["data.classes"], conf["data.frames"], conf["data.points"], conf["data.noise"]
    task = conf["data.task"]
    if conf["data.train_path"]:
        train = read_clips(conf["data.train_path"])
    else:
        train = gen_synth_dynamic(n, conf["data.per_class"], t, p, noise, rng.child("train"), task=task)
    if conf["data.test_path"]:
        test = read_clips(conf["data.test_path"])
    else:
        test = gen_synth_dynamic(n, conf["data.test_per_class"], t, p, noise, rng.child("test"), task=task)
    if conf["data.static_path"]:
        static = read_clouds(conf["data.static_path"])
    else:
        static = gen_synth_static(conf["data.static_classes"], conf["data.static_per_class"],
                                  conf["data.static_points"], noise, rng.child("static"))
    return ExperimentData(train, test, static)


@dataclass
class ExperimentResult:
    config: Config
    seed: int
    model: ModelConfig
    initial: ParamStore
    params: ParamStore
    log: MetricLog = field(default_factory=MetricLog)

    def summary(self) -> dict:
        counts = count_params(self.params)
        return {"final_train_acc": self.log.final_train_acc, "final_test_acc": self.log.final_test_acc,
                "gap": self.log.train_test_gap, "params_trainable": counts["trainable"],
                "otdd_final": self.log.otdd_final}


def run_experiment(conf: Config, seed: int, stage: str = "both", out_dir: str | Path | None = None,
                   init: ParamStore | None = None, data: ExperimentData | None = None) -> ExperimentResult:
    """Stage 1 (when the embedder is aligned), then stage 2, per ``stage``.

    ``init`` resumes from saved parameters instead of a fresh initialisation.
    With ``out_dir`` the resolved config, metric log, timing log and final
    checkpoint are written there.
    """
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    rng = RngState(seed)
    data = data or load_data(conf, rng.child("data"))
    mcfg = model_config(conf, data.train.num_classes)
    schedule = train_schedule(conf)
    params = build_model(mcfg, rng.child("init")) if init is None else init.copy()
    initial = params.copy()
    train = encode_clips(data.train.clips, data.train.labels, data.train.num_classes, mcfg,
                         rng.child("neigh", "train"))
    test = encode_clips(data.test.clips, data.test.labels, data.test.num_classes, mcfg,
                        rng.child("neigh", "test"))
    log = MetricLog()
    if stage in ("1", "both") and mcfg.use_pae:
        stat = LabeledEmbeddingSet(static_embedding(data.static.clouds, params), data.static.labels,
                                   data.static.num_classes)
        delta, log1 = stage1_align(train, stat, params, mcfg, align_settings(conf), schedule,
                                   rng.child("stage1"))
        apply_delta(params, delta)
        log.extend(log1)
    if stage in ("2", "both"):
        delta, log2 = stage2_adapt(train, test, params, mcfg, schedule, rng.child("stage2"))
        apply_delta(params, delta)
        log.extend(log2)
    result = ExperimentResult(conf, seed, mcfg, initial, params, log)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def write_outputs(result: ExperimentResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(f"# seed {result.seed}\n" + result.config.to_text())
    (out / "metrics.jsonl").write_text(result.log.to_jsonl())
    (out / "timing.jsonl").write_text(result.log.timing_jsonl())
    (out / "checkpoint.ataw").write_bytes(checkpoint_bytes(result.params))


def frozen_unchanged(before: ParamStore, after: ParamStore) -> bool:
    """Every tensor frozen in ``before`` is byte-identical in ``after``."""
    return all(before[n].tobytes() == after[n].tobytes() and before[n].shape == after[n].shape
               for n in before.frozen_names())

