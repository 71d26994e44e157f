"""Alignment and adaptation training, schedules, metric logs and sweeps."""
from artifact.pipeline.metrics import EpochRecord, MetricLog, parse_metric_log, read_metric_log
from artifact.pipeline.schedule import TrainSchedule, lr_at

__all__ = ["EpochRecord", "MetricLog", "TrainSchedule", "lr_at", "parse_metric_log", "read_metric_log"]
