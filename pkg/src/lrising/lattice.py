"""Finite boxes Lambda_N = {-N, ..., N}^d and their site indexing."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class LatticeBox:
    d: int
    N: int

    def __post_init__(self):
        if self.d < 1 or self.N < 0:
            raise ValueError("need d >= 1 and N >= 0")

    @property
    def side(self) -> int:
        return 2 * self.N + 1

    @property
    def volume(self) -> int:
        return self.side ** self.d

    @cached_property
    def points(self) -> np.ndarray:
        """Sites in lexicographic order, shape (volume, d)."""
        r = np.arange(-self.N, self.N + 1)
        grids = np.meshgrid(*([r] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)

    def index(self, x) -> int:
        x = np.atleast_1d(np.asarray(x, dtype=np.int64))
        if x.size != self.d:
            raise ValueError(f"point {tuple(x)} has wrong dimension for d={self.d}")
        if np.any(np.abs(x) > self.N):
            raise ValueError(f"point {tuple(x)} lies outside Lambda_{self.N}")
        i = 0
        for c in x:
            i = i * self.side + int(c) + self.N
        return i

    def indices(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.int64).reshape(-1, self.d) + self.N
        out = np.zeros(len(xs), dtype=np.int64)
        for k in range(self.d):
            out = out * self.side + xs[:, k]
        return out

    def contains(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x))
        return x.size == self.d and bool(np.all(np.abs(x) <= self.N))

    @property
    def origin(self) -> int:
        return self.index([0] * self.d)

    def sub_box_mask(self, n: int) -> np.ndarray:
        return np.abs(self.points).max(axis=1) <= n


def sup_shell_points(d: int, r: int) -> np.ndarray:
    """All integer points with max |x_i| == r."""
    box = LatticeBox(d, r).points
    return box[np.abs(box).max(axis=1) == r]


def round_direction(s, n: int) -> np.ndarray:
    """The lattice point nearest to n * s."""
    return np.rint(np.asarray(s, dtype=float) * n).astype(np.int64)
