"""Counter-based random streams and alias tables.

Every chain draws from numpy's Philox generator keyed by
SeedSequence(seed, spawn_key=(chain_id,)), so chains are independent and a
rerun with the same seed reproduces every draw.
"""

from __future__ import annotations

import os

import numpy as np

RNG_NAME = "numpy.random.Philox(4x64, 10 rounds) keyed by SeedSequence(seed, spawn_key=(chain_id,))"
SEED_ENV = "LRISING_SEED"
DEFAULT_SEED = 20240101


def default_seed() -> int:
    v = os.environ.get(SEED_ENV)
    return int(v) if v not in (None, "") else DEFAULT_SEED


def make_rng(seed: int, chain_id: int = 0) -> np.random.Generator:
    if seed < 0 or seed >= 2 ** 64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(chain_id),))
    return np.random.Generator(np.random.Philox(ss))


class AliasTable:
    """Walker alias table: O(1) draws from a fixed discrete distribution."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or len(w) == 0 or np.any(w < 0):
            raise ValueError("weights must be a nonempty nonnegative vector")
        self.total = float(w.sum())
        n = len(w)
        self.prob = np.ones(n)
        self.alias = np.arange(n)
        if self.total == 0:
            return
        scaled = w * n / self.total
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            self.prob[s] = scaled[s]
            self.alias[s] = l
            scaled[l] -= 1.0 - scaled[s]
            (small if scaled[l] < 1.0 else large).append(l)
        for i in small + large:
            self.prob[i] = 1.0

    def __len__(self):
        return len(self.prob)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        i = rng.integers(0, len(self.prob), size=size)
        keep = rng.random(size) < self.prob[i]
        return np.where(keep, i, self.alias[i])
