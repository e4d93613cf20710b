"""Seeded, counter-based random streams.

An ``Rng(seed, stream)`` is numpy's Philox4x64 bit generator keyed through
``SeedSequence(seed, spawn_key=(stream,))``. Philox is a counter-based
generator whose output depends only on (key, counter), so the same
``(seed, stream)`` pair yields the same bits on every platform. Independent
consumers (weight init, action sampling, minibatch shuffling, dropout) draw
from distinct ``stream`` numbers of one seed.
"""

from __future__ import annotations

import numpy as np


class Rng:
    def __init__(self, seed: int, stream: int = 0) -> None:
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self._gen = np.random.Generator(np.random.Philox(seq))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def child(self, stream: int) -> "Rng":
        """A new independent stream of the same seed."""
        return Rng(self.seed, stream)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def random(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state
