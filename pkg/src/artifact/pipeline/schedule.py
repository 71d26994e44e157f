"""Learning-rate schedule: per-epoch linear warmup then step decay."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class TrainSchedule:
    stage1_epochs: int = 10
    stage2_epochs: int = 40
    base_lr: float = 0.01
    warmup_epochs: int = 10
    decay_epochs: tuple[int, ...] = (20, 30)
    decay_factor: float = 0.1
    momentum: float = 0.9
    dropout: float = 0.5
    batch_size: int = 16
    stage1_lr: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.warmup_epochs < 0 or self.warmup_epochs > max(self.stage2_epochs, 0):
            raise ValueError(f"warmup_epochs {self.warmup_epochs} exceeds stage2_epochs {self.stage2_epochs}")
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ValueError(f"decay epochs must be strictly increasing: {self.decay_epochs}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def lr_at(schedule: TrainSchedule, epoch: int) -> float:
    """base*(e+1)/warmup during warmup, else base*factor^(#decay epochs <= e)."""
    if epoch < schedule.warmup_epochs:
        return schedule.base_lr * (epoch + 1) / schedule.warmup_epochs
    drops = sum(1 for d in schedule.decay_epochs if d <= epoch)
    return schedule.base_lr * schedule.decay_factor ** drops
