"""Seeded, replayable Brownian increments on a uniform time grid.

Each sample path draws from its own counter-based stream (Philox keyed by
(seed, path index)), so ensembles are reproducible regardless of how the
paths are scheduled, and replaying a driver with the same seed is
bit-identical.

Drivers refine dyadically: refine(k) subdivides every increment k times by
Brownian-bridge midpoint displacement, with the bridge noise drawn from
streams keyed by (seed mixed with level, path).  Summing each group of 2^k
fine increments recovers the coarse increment up to rounding, which is what
pathwise refinement studies need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grids import TimeGrid

_LEVEL_MIX = 0x9E3779B97F4A7C15  # odd 64-bit constant, decorrelates levels


def _stream(seed: int, path: int, level: int = 0) -> np.random.Generator:
    key = ((seed + level * _LEVEL_MIX) & 0xFFFFFFFFFFFFFFFF, path)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class BrownianDriver:
    seed: int
    timegrid: TimeGrid
    dimension: int
    n_paths: int
    level: int = 0  # dyadic refinements applied since construction
    increments: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m, d, s = self.timegrid.steps, self.dimension, self.n_paths
        base_steps = m >> self.level
        if base_steps << self.level != m:
            raise ValueError("steps inconsistent with refinement level")
        out = np.empty((base_steps, s, d))
        root_dt = self.timegrid.dt * (1 << self.level)
        for p in range(s):
            out[:, p, :] = _stream(self.seed, p).normal(
                0.0, math.sqrt(root_dt), (base_steps, d)
            )
        for lev in range(1, self.level + 1):
            out = self._subdivide(out, lev)
        self.increments = out

    def _subdivide(self, inc: np.ndarray, lev: int) -> np.ndarray:
        """One bridge halving: each increment I over a cell of width w splits
        into I/2 + xi and I/2 - xi with xi ~ N(0, w/4)."""
        n_cells, s, d = inc.shape
        w = self.timegrid.horizon / n_cells
        fine = np.empty((2 * n_cells, s, d))
        for p in range(s):
            xi = _stream(self.seed, p, lev).normal(
                0.0, math.sqrt(w / 4.0), (n_cells, d)
            )
            half = 0.5 * inc[:, p, :]
            fine[0::2, p, :] = half + xi
            fine[1::2, p, :] = half - xi
        return fine

    @property
    def dt(self) -> float:
        return self.timegrid.dt

    @property
    def steps(self) -> int:
        return self.timegrid.steps

    def refine(self, k: int = 1) -> "BrownianDriver":
        """Driver on the 2^k-times finer grid, pathwise consistent."""
        if k < 1:
            raise ValueError("refinement factor must be >= 1")
        fine_grid = TimeGrid(self.timegrid.horizon, self.timegrid.steps << k)
        return BrownianDriver(
            self.seed, fine_grid, self.dimension, self.n_paths, self.level + k
        )

    def partial_sum(self, s_idx: int, t_idx: int) -> np.ndarray:
        """W_{t_idx} - W_{s_idx}, shape (n_paths, d)."""
        return self.increments[s_idx:t_idx].sum(axis=0)

    def normality_stats(self) -> dict:
        """Sample mean and variance of the pooled increments."""
        flat = self.increments.reshape(-1, self.dimension)
        return {
            "mean": flat.mean(axis=0),
            "var": flat.var(axis=0),
            "expected_var": self.dt,
            "n": flat.shape[0],
        }
