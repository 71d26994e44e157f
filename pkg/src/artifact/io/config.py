"""Flat ``key = value`` run configuration with typed defaults.

Lines are ``namespace.key = value``; ``#`` starts a comment.  Every key has a
default, unknown keys are rejected, and :meth:`Config.to_text` writes the fully
resolved table back out so a run can be reproduced from its own echo.
"""
from __future__ import annotations

from pathlib import Path

from artifact.errors import ConfigError


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    return tuple(int(t) for t in text.split(",") if t.strip()) if text else ()


# key: (default, parser, doc)
SCHEMA: dict[str, tuple[object, object, str]] = {
    "data.task": ("motion", str, "motion | rotation (clockwise vs counter-clockwise)"),
    "data.classes": (4, int, "number of 4D classes"),
    "data.per_class": (32, int, "training clips per class"),
    "data.test_per_class": (16, int, "test clips per class"),
    "data.frames": (8, int, "frames per clip"),
    "data.points": (128, int, "points per frame"),
    "data.noise": (0.01, float, "Gaussian jitter scale"),
    "data.static_classes": (4, int, "number of 3D classes"),
    "data.static_per_class": (32, int, "static clouds per class"),
    "data.static_points": (128, int, "points per static cloud"),
    "data.train_path": ("", str, "optional PCV4 training file"),
    "data.test_path": ("", str, "optional PCV4 test file"),
    "data.static_path": ("", str, "optional PC3D file"),
    "embed.num_anchors": (16, int, "anchor points per anchor frame"),
    "embed.radius": (0.5, float, "ball-query radius"),
    "embed.neighbors_k": (8, int, "points gathered per anchor and tube frame"),
    "embed.tube_length": (3, int, "frames per temporal tube (odd)"),
    "embed.anchor_stride": (2, int, "frames between anchor frames"),
    "embed.dim": (64, int, "token width"),
    "model.depth": (2, int, "frozen backbone blocks"),
    "model.heads": (4, int, "attention heads"),
    "model.eq4_literal": (False, _bool, "drop the attention skip inside adapted blocks"),
    "adapter.r": (16, int, "bottleneck width"),
    "adapter.kernel": (3, int, "depth-wise kernel size (odd)"),
    "adapter.depth": (2, int, "blocks that receive adapters"),
    "adapter.activation": ("gelu", str, "gelu | relu | tanh"),
    "adapter.placement": ("bypass", str, "bypass | prepend | post | middle"),
    "adapter.zero_init_up": (True, _bool, "zero the up-projections at init"),
    "adapter.conv_axis": ("temporal", str, "temporal | sequence"),
    "adapter.pva_bias": (False, _bool, "add biases inside the video adapter"),
    "toggle.pae": (True, _bool, "run stage 1 and train the 4D embedder"),
    "toggle.sce": (True, _bool, "spatial context encoder branch"),
    "toggle.pva": (True, _bool, "video adapter branch"),
    "ot.epsilon": (0.1, float, "entropic regularisation (0 = exact solver)"),
    "ot.p": (2.0, float, "Wasserstein order"),
    "ot.max_iter": (2000, int, "Sinkhorn iteration cap"),
    "ot.tol": (1e-6, float, "Sinkhorn L1 marginal tolerance"),
    "ot.normalize_cost": (False, _bool, "divide costs by their median"),
    "ot.debias": (False, _bool, "debiased dataset distance (distance command)"),
    "otdd.b": (32, int, "per-class subsample size"),
    "otdd.R": (1, int, "rounds per class"),
    "otdd.inner": ("gaussian", str, "label distance: gaussian | exact"),
    "otdd.metric": ("otdd", str, "stage-1 objective: otdd | mmd | euclid | cka"),
    "otdd.mmd_bandwidth": (1.0, float, "RBF bandwidth for mmd"),
    "schedule.stage1_epochs": (10, int, "alignment epochs"),
    "schedule.stage2_epochs": (40, int, "adaptation epochs"),
    "schedule.stage1_lr": (0.01, float, "alignment learning rate"),
    "schedule.base_lr": (0.01, float, "adaptation peak learning rate"),
    "schedule.warmup_epochs": (10, int, "linear warmup epochs"),
    "schedule.decay_epochs": ((20, 30), _int_list, "epochs where the rate decays"),
    "schedule.decay_factor": (0.1, float, "multiplicative decay"),
    "schedule.momentum": (0.9, float, "SGD momentum"),
    "schedule.dropout": (0.5, float, "dropout at the head input"),
    "schedule.batch_size": (16, int, "minibatch size"),
    "ablate.grid": ("toggles", str, "toggles | placement | metric | kernel | depth | budget"),
    "ablate.seeds": ((0,), _int_list, "seeds per ablation cell"),
}

KEYS = tuple(SCHEMA)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class Config:
    """Resolved configuration; every key of :data:`SCHEMA` is present."""

    def __init__(self, values: dict | None = None) -> None:
        self._values = {k: spec[0] for k, spec in SCHEMA.items()}
        for key, value in (values or {}).items():
            self._set(key, value)

    def _set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(KEYS)}")
        parser = SCHEMA[key][1]
        if isinstance(value, str) and parser is not str:
            try:
                value = parser(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        elif parser is _int_list and not isinstance(value, tuple):
            value = tuple(int(v) for v in value)
        elif parser is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        self._values[key] = value

    def __getitem__(self, key: str):
        if key not in self._values:
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(KEYS)}")
        return self._values[key]

    def __eq__(self, other) -> bool:
        return isinstance(other, Config) and self._values == other._values

    def as_dict(self) -> dict:
        return dict(self._values)

    def updated(self, mapping: dict) -> "Config":
        out = Config(self._values)
        for k, v in mapping.items():
            out._set(k, v)
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self._values.items())


def parse_config(text: str) -> Config:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}; valid keys: {', '.join(KEYS)}")
        values[key] = value
    return Config(values)


def load_config(path: str | Path | None) -> Config:
    return Config() if path is None else parse_config(Path(path).read_text())
