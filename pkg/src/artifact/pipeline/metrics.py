"""Per-epoch training records and their deterministic JSON-lines form."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

FIELDS = ("train_loss", "train_acc", "test_acc", "otdd_estimate", "lr")


def fmt(value) -> str | None:
    """12 significant digits; None stays None."""
    return None if value is None else format(float(value), ".12g")


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    train_loss: float | None = None
    train_acc: float | None = None
    test_acc: float | None = None
    otdd_estimate: float | None = None
    lr: float | None = None
    wall_ms: float = 0.0

    def to_json(self) -> str:
        obj = {"stage": self.stage, "epoch": self.epoch}
        obj.update({k: fmt(getattr(self, k)) for k in FIELDS})
        return json.dumps(obj, sort_keys=False)


@dataclass
class MetricLog:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records:
            last = self.records[-1]
            if (record.stage, record.epoch) <= (last.stage, last.epoch):
                raise ValueError(f"record ({record.stage}, {record.epoch}) out of order after "
                                 f"({last.stage}, {last.epoch})")
        self.records.append(record)

    def extend(self, other: "MetricLog") -> None:
        for r in other.records:
            self.append(r)

    def __len__(self) -> int:
        return len(self.records)

    def stage(self, s: int) -> list[EpochRecord]:
        return [r for r in self.records if r.stage == s]

    def _final(self, name: str):
        for r in reversed(self.records):
            if getattr(r, name) is not None:
                return getattr(r, name)
        return None

    @property
    def final_train_acc(self):
        return self._final("train_acc")

    @property
    def final_test_acc(self):
        return self._final("test_acc")

    @property
    def train_test_gap(self):
        tr, te = self.final_train_acc, self.final_test_acc
        return None if tr is None or te is None else tr - te

    @property
    def otdd_final(self):
        s1 = [r.otdd_estimate for r in self.stage(1) if r.otdd_estimate is not None]
        return s1[-1] if s1 else None

    def otdd_trajectory(self) -> list[float]:
        return [r.otdd_estimate for r in self.stage(1) if r.otdd_estimate is not None]

    def to_jsonl(self) -> str:
        """Deterministic serialisation; wall-clock time is kept out of it."""
        lines = [r.to_json() for r in self.records]
        lines.append(json.dumps({"final": {
            "train_acc": fmt(self.final_train_acc), "test_acc": fmt(self.final_test_acc),
            "train_test_gap": fmt(self.train_test_gap), "otdd_final": fmt(self.otdd_final)}}))
        return "\n".join(lines) + "\n"

    def timing_jsonl(self) -> str:
        return "".join(json.dumps({"stage": r.stage, "epoch": r.epoch, "wall_ms": fmt(r.wall_ms)}) + "\n"
                       for r in self.records)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())


def _num(text):
    return None if text is None else float(text)


def parse_metric_log(text: str) -> tuple[MetricLog, dict]:
    """Inverse of :meth:`MetricLog.to_jsonl`; returns the log and its final block."""
    log, final = MetricLog(), {}
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if "final" in obj:
            final = {k: _num(v) for k, v in obj["final"].items()}
            continue
        log.append(EpochRecord(stage=int(obj["stage"]), epoch=int(obj["epoch"]),
                               **{k: _num(obj.get(k)) for k in FIELDS}))
    return log, final


def read_metric_log(path: str | Path) -> tuple[MetricLog, dict]:
    return parse_metric_log(Path(path).read_text())
