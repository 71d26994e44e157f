"""SGD with momentum over named parameter groups."""
from __future__ import annotations

import numpy as np

from artifact.model.params import ParamStore, module_of

GROUP_OF_MODULE = {"embed_d": "embedder", "pva": "adapters", "sce": "adapters", "head": "head"}


def default_groups(params: ParamStore) -> dict[str, list[str]]:
    """Trainable tensors by role; everything trainable lands in exactly one group."""
    groups: dict[str, list[str]] = {}
    for name in params.trainable_names():
        groups.setdefault(GROUP_OF_MODULE.get(module_of(name), "other"), []).append(name)
    return groups


class SGD:
    def __init__(self, params: ParamStore, groups: dict[str, list[str]] | None = None,
                 momentum: float = 0.9, lr_scale: dict[str, float] | None = None) -> None:
        self.params = params
        self.groups = default_groups(params) if groups is None else {k: list(v) for k, v in groups.items()}
        seen: dict[str, str] = {}
        for g, names in self.groups.items():
            for n in names:
                if params.is_frozen(n):
                    raise ValueError(f"frozen parameter {n!r} placed in group {g!r}")
                if n in seen:
                    raise ValueError(f"parameter {n!r} in groups {seen[n]!r} and {g!r}")
                seen[n] = g
        missing = set(params.trainable_names()) - set(seen)
        if missing:
            raise ValueError(f"trainable parameters without a group: {sorted(missing)}")
        self.momentum = momentum
        self.lr_scale = dict(lr_scale or {})
        self.velocity = {n: np.zeros_like(params[n]) for n in seen}

    @property
    def names(self) -> list[str]:
        return list(self.velocity)

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for g, names in self.groups.items():
            rate = lr * self.lr_scale.get(g, 1.0)
            for n in names:
                grad = grads.get(n)
                if grad is None:
                    continue
                v = self.velocity[n]
                v *= self.momentum
                v += grad
                self.params.assign(n, self.params[n] - rate * v)
