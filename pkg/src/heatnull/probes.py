"""Seeded random data for sweeps: initial states, sources, adjoint terminals."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from heatnull.geometry import SpaceTimeGrid
from heatnull.heat_ops import spatial_ops


def _unit(grid: SpaceTimeGrid, v: np.ndarray) -> np.ndarray:
    nrm = float(np.sqrt(v**2 @ grid.mass))
    return v / nrm if nrm > 0 else v


def smoothed_field(grid: SpaceTimeGrid, rng: np.random.Generator, unit: bool = True) -> np.ndarray:
    """Uniform node noise after one backward-Euler Neumann heat step of size dt."""
    u = rng.uniform(-1.0, 1.0, grid.n)
    m = grid.mass
    A = (sp.diags(m) + grid.dt * spatial_ops(grid).K0).tocsc()
    v = spla.spsolve(A, m * u)
    return _unit(grid, v) if unit else v


def modal_field(grid: SpaceTimeGrid, rng: np.random.Generator, modes: int = 6, unit: bool = True) -> np.ndarray:
    """Random cosine series; the same seed gives the same function on every grid."""
    pts = grid.points
    b = np.asarray(grid.domain.bounds, dtype=float)
    lo, L = b[::2], b[1::2] - b[::2]
    z = (pts - lo) / L
    if grid.dim == 1:
        c = rng.standard_normal(modes) / (1.0 + np.arange(modes))
        v = sum(c[k] * np.cos(k * np.pi * z[:, 0]) for k in range(modes))
    else:
        c = rng.standard_normal((modes, modes))
        v = np.zeros(grid.n)
        for i in range(modes):
            for j in range(modes):
                v += c[i, j] / (1.0 + i + j) * np.cos(i * np.pi * z[:, 0]) * np.cos(j * np.pi * z[:, 1])
    return _unit(grid, v) if unit else v


def time_cutoff(grid: SpaceTimeGrid) -> np.ndarray:
    """Per-step profile (1 - 2t/T)_+ at step midpoints; zero for t >= T/2."""
    tm = grid.t_cells
    return np.clip(1.0 - 2.0 * tm / grid.T, 0.0, None)


def random_source(grid: SpaceTimeGrid, rng: np.random.Generator, kind: str = "modal") -> np.ndarray:
    """Per-step source rows that vanish on [T/2, T] so that rho1 g stays finite."""
    v = modal_field(grid, rng) if kind == "modal" else smoothed_field(grid, rng)
    return time_cutoff(grid)[:, None] * v[None, :]


def data_batch(grid: SpaceTimeGrid, seed: int, count: int = 20, kind: str = "modal"):
    """(g, y0) pairs: even entries carry y0 only, odd ones a source as well."""
    rng = np.random.default_rng(seed)
    field = modal_field if kind == "modal" else smoothed_field
    for i in range(count):
        y0 = field(grid, rng)
        g = random_source(grid, rng, kind) if i % 2 else None
        yield g, y0
