"""Probability measures on R^d: grid densities, particle sets, Gaussians.

Grid densities live on the unit cube [0,1]^d (d = 1 or 2) with
``cells_per_axis`` half-open cells per axis. Values are densities (mass per
unit volume), constant on each cell, stored flat in row-major order so that
for d = 2 the cell ``(i0, i1)`` has flat index ``i0 * n + i1`` with ``i0``
indexing the first coordinate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .rng import make_rng

MASS_TOL = 1e-12


class DegenerateDensityError(ValueError):
    pass


@dataclass(frozen=True)
class GridDensity:
    """Piecewise-constant density on ``[0,1]^dim``."""

    dim: int
    cells_per_axis: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {self.dim}")
        if self.cells_per_axis < 1:
            raise ValueError("cells_per_axis must be >= 1")
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if vals.size != self.cells_per_axis**self.dim:
            raise ValueError(
                f"expected {self.cells_per_axis**self.dim} values, got {vals.size}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid density values must be finite")
        if np.any(vals < 0):
            raise ValueError("grid density values must be nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, dim: int, cells_per_axis: int) -> "GridDensity":
        return cls(dim, cells_per_axis, np.ones(cells_per_axis**dim))

    @classmethod
    def from_function(
        cls, fn: Callable[[np.ndarray], np.ndarray], dim: int, cells_per_axis: int
    ) -> "GridDensity":
        """Evaluate ``fn`` at cell centers and normalize."""
        centers = grid_centers(dim, cells_per_axis)
        return normalize(cls(dim, cells_per_axis, np.asarray(fn(centers), float)))

    @property
    def n_cells(self) -> int:
        return self.values.size

    @property
    def cell_volume(self) -> float:
        return float(self.cells_per_axis) ** (-self.dim)

    @property
    def masses(self) -> np.ndarray:
        return self.values * self.cell_volume

    def centers(self) -> np.ndarray:
        return grid_centers(self.dim, self.cells_per_axis)

    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    def same_grid(self, other: "GridDensity") -> bool:
        return self.dim == other.dim and self.cells_per_axis == other.cells_per_axis


@dataclass(frozen=True)
class ParticleMeasure:
    """Weighted point set; ``points`` has shape ``(n, d)``."""

    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.ndim != 2 or pts.shape[0] != w.size:
            raise ValueError("points must be (n, d) with one weight per point")
        if w.size == 0:
            raise ValueError("particle measure needs at least one point")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "ParticleMeasure":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def variance(self) -> np.ndarray:
        mu = self.mean()
        return self.weights @ (self.points - mu) ** 2


@dataclass(frozen=True)
class GaussianMeasure:
    """Gaussian with diagonal covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_1d(np.asarray(self.covariance, dtype=float))
        if cov.shape != mu.shape:
            cov = np.broadcast_to(cov, mu.shape).copy()
        if np.any(cov <= 0):
            raise ValueError("covariance entries must be positive")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def standard(cls, dim: int = 1) -> "GaussianMeasure":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        z = (x - self.mean) ** 2 / self.covariance
        return -0.5 * (z.sum(axis=1) + np.sum(np.log(2 * np.pi * self.covariance)))


Measure = Union[GridDensity, ParticleMeasure, GaussianMeasure]


def grid_centers(dim: int, cells_per_axis: int) -> np.ndarray:
    """Cell centers, shape ``(cells_per_axis**dim, dim)``, row-major."""
    c = (np.arange(cells_per_axis) + 0.5) / cells_per_axis
    if dim == 1:
        return c[:, None]
    g0, g1 = np.meshgrid(c, c, indexing="ij")
    return np.stack([g0.ravel(), g1.ravel()], axis=1)


def normalize(g: GridDensity) -> GridDensity:
    total = float(np.sum(g.values)) * g.cell_volume
    if not total > 0:
        raise DegenerateDensityError("degenerate density")
    return GridDensity(g.dim, g.cells_per_axis, g.values / total)


def support_points(m: Union[GridDensity, ParticleMeasure]) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes and masses: cell centers for grids, atoms for particles."""
    if isinstance(m, GridDensity):
        return m.centers(), m.masses
    if isinstance(m, ParticleMeasure):
        return m.points, m.weights
    raise TypeError(f"no discrete support for {type(m).__name__}")


def sample(m: Measure, n: int, seed: int) -> ParticleMeasure:
    """Draw ``n`` i.i.d. equal-weight samples.

    Grid sampling picks a cell with probability equal to its mass and then a
    uniform point inside that cell.
    """
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    rng = make_rng(seed, "sample")
    if isinstance(m, GaussianMeasure):
        pts = m.mean + np.sqrt(m.covariance) * rng.standard_normal((n, m.dim))
    elif isinstance(m, GridDensity):
        p = m.masses / m.masses.sum()
        cells = rng.choice(m.n_cells, size=n, p=p)
        h = 1.0 / m.cells_per_axis
        if m.dim == 1:
            idx = cells[:, None]
        else:
            idx = np.stack(np.divmod(cells, m.cells_per_axis), axis=1)
        pts = (idx + rng.random((n, m.dim))) * h
    elif isinstance(m, ParticleMeasure):
        idx = rng.choice(len(m), size=n, p=m.weights)
        pts = m.points[idx]
    else:
        raise TypeError(f"cannot sample from {type(m).__name__}")
    return ParticleMeasure.uniform(pts)


def pushforward_empirical(
    base: Measure, fn: Callable[[np.ndarray], np.ndarray], n: int, seed: int
) -> ParticleMeasure:
    """Empirical law of ``fn(X)`` for ``X ~ base`` (``fn`` acts row-wise on ``(n, d)``)."""
    x = sample(base, n, seed).points
    y = np.asarray(fn(x), dtype=float).reshape(x.shape[0], -1)
    return ParticleMeasure.uniform(y)


# -- CSV interchange ---------------------------------------------------------


def write_grid_csv(g: GridDensity, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_index", "value"])
        for i, v in enumerate(g.values):
            w.writerow([i, repr(float(v))])


def read_grid_csv(path, dim: int = 1) -> GridDensity:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: int(r["cell_index"]))
    vals = np.array([float(r["value"]) for r in rows])
    n = int(round(vals.size ** (1.0 / dim)))
    return GridDensity(dim, n, vals)


def write_particles_csv(p: ParticleMeasure, path) -> None:
    header = [f"x{i}" for i in range(p.dim)] + ["weight"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for x, wt in zip(p.points, p.weights):
            w.writerow([repr(float(v)) for v in x] + [repr(float(wt))])


def read_particles_csv(path) -> ParticleMeasure:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    d = len(header) - 1
    return ParticleMeasure(data[:, :d], data[:, d])
