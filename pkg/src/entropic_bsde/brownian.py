"""Reproducible Brownian increments.

Each path owns a counter-based Philox stream keyed by ``(seed, path_index)``;
step ``k`` of a path is the ``k``-th normal drawn from that stream. Blocks of
paths can therefore be generated by any number of workers and reassembled
bit-identically.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import TimeGrid

_MASK64 = (1 << 64) - 1


def path_generator(seed: int, path_index: int, *extra: int) -> np.random.Generator:
    if extra:
        ss = np.random.SeedSequence([seed & _MASK64, path_index, *extra])
        return np.random.Generator(np.random.Philox(ss))
    key = np.array([seed & _MASK64, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _block(seed: int, start: int, stop: int, n_steps: int) -> np.ndarray:
    out = np.empty((stop - start, n_steps))
    for j, i in enumerate(range(start, stop)):
        out[j] = path_generator(seed, i).standard_normal(n_steps)
    return out


def standard_normals(seed: int, n_paths: int, n_steps: int, *, path_offset: int = 0, n_workers: int = 1) -> np.ndarray:
    """Array ``(n_paths, n_steps)`` of N(0,1) draws, independent of ``n_workers``."""
    lo, hi = path_offset, path_offset + n_paths
    if n_workers <= 1 or n_paths < 2 * n_workers:
        return _block(seed, lo, hi, n_steps)
    edges = np.linspace(lo, hi, n_workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        parts = list(pool.map(lambda ab: _block(seed, ab[0], ab[1], n_steps), zip(edges[:-1], edges[1:])))
    return np.concatenate(parts, axis=0)


@dataclass(frozen=True, eq=False)
class BrownianPaths:
    """Increments ``dW[i, k] = W_{t_{k+1}} - W_{t_k}`` for each path ``i``."""

    grid: TimeGrid
    dW: np.ndarray
    seed: int
    path_offset: int = 0

    def __post_init__(self):
        if self.dW.shape[1] != self.grid.n_steps:
            raise ValueError(f"increments have {self.dW.shape[1]} steps, grid has {self.grid.n_steps}")
        self.dW.setflags(write=False)

    @classmethod
    def generate(cls, grid: TimeGrid, n_paths: int, seed: int, *, path_offset: int = 0, n_workers: int = 1) -> "BrownianPaths":
        z = standard_normals(seed, n_paths, grid.n_steps, path_offset=path_offset, n_workers=n_workers)
        return cls(grid, z * np.sqrt(grid.dt), int(seed), path_offset)

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @property
    def W(self) -> np.ndarray:
        out = np.zeros((self.n_paths, self.grid.n_knots))
        np.cumsum(self.dW, axis=1, out=out[:, 1:])
        return out

    def coarsen(self, factor: int) -> "BrownianPaths":
        """Same Brownian paths observed on a grid ``factor`` times coarser."""
        if self.grid.n_steps % factor:
            raise ValueError(f"{self.grid.n_steps} steps not divisible by {factor}")
        dW = self.dW.reshape(self.n_paths, -1, factor).sum(axis=2)
        return BrownianPaths(TimeGrid(self.grid.t_end, self.grid.n_steps // factor), dW, self.seed, self.path_offset)

    def metadata(self) -> dict:
        return {"seed": self.seed, "n_paths": self.n_paths, "path_offset": self.path_offset,
                "n_steps": self.grid.n_steps, "t_end": self.grid.t_end}


def path_mean(x: np.ndarray) -> np.ndarray:
    """Mean over the leading (path) axis using numpy's pairwise summation."""
    x = np.asarray(x, dtype=float)
    moved = np.ascontiguousarray(np.moveaxis(x, 0, -1))
    return moved.sum(axis=-1) / x.shape[0]


def path_var(x: np.ndarray) -> np.ndarray:
    """Unbiased variance over the leading (path) axis; zero for a single path."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        return np.zeros(x.shape[1:])
    d = x - path_mean(x)
    return path_mean(d * d) * x.shape[0] / (x.shape[0] - 1)
