"""Counter-based random streams (Philox) keyed by a 64-bit seed."""
from __future__ import annotations

import zlib

import numpy as np


class RngState:
    """Seeded Philox stream; ``child`` derives independent named sub-streams."""

    def __init__(self, seed: int, key: tuple[int, ...] = ()) -> None:
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        entropy = [self.seed & 0xFFFFFFFF, self.seed >> 32, *self.key]
        self.generator = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def child(self, *key: int | str) -> "RngState":
        return RngState(self.seed, self.key + tuple(_key_int(k) for k in key))

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, key={self.key})"

    # thin pass-throughs used across the package
    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size=size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, n, size, replace=False):
        return self.generator.choice(n, size=size, replace=replace)

    def random(self, size=None):
        return self.generator.random(size)


def _key_int(k: int | str) -> int:
    if isinstance(k, str):
        # stable across runs, unlike hash()
        return zlib.crc32(k.encode("utf-8"))
    return int(k)
