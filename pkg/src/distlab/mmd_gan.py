"""Density-represented generator trained against a fixed RKHS discriminator.

The generator is a grid density ``P`` (allowed to go negative during
training) and the loss is ``mmd2(P, P*)``. Its gradient flow is the linear
system ``dP/dt = -K (P - P*)`` with ``K`` the Gram quadrature operator, which
has the closed-form eigen-solution implemented in ``spectral_solution``.
Test errors are measured after projecting onto the probability simplex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .measures import GridDensity, ParticleMeasure, grid_centers, sample
from .metrics import mmd2, w2_1d
from .rfm import DivergenceError, FeatureBank, gram_operator, kernel
from .rng import make_rng
from .trajectory import TrajectoryLog

MMD_COLUMNS = ["t", "mmd2", "w2", "w2_empirical"]


@dataclass(frozen=True)
class DensityIterate:
    """Signed piecewise-constant function on ``[0,1]^dim`` (a point of ``L^2``)."""

    dim: int
    cells_per_axis: int
    values: np.ndarray = field(repr=False)
    t: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size != self.cells_per_axis**self.dim:
            raise ValueError("values do not match the grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("density iterate must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_grid(cls, g: GridDensity, t: float = 0.0) -> "DensityIterate":
        return cls(g.dim, g.cells_per_axis, g.values, t)

    @property
    def grid(self) -> GridDensity:
        return GridDensity.uniform(self.dim, self.cells_per_axis)

    @property
    def cell_volume(self) -> float:
        return float(self.cells_per_axis) ** (-self.dim)

    def centers(self) -> np.ndarray:
        return grid_centers(self.dim, self.cells_per_axis)


def project_simplex(P) -> GridDensity:
    """Nearest grid density in the mass-weighted ``L^2`` norm.

    With equal cell volumes the solution is ``max(P - theta, 0)`` with the
    threshold ``theta`` fixed by unit mass (sort-based water filling).
    """
    v = np.asarray(P.values, dtype=float)
    vol = P.cell_volume
    u = np.sort(v)[::-1]
    k = np.arange(1, v.size + 1)
    theta = (np.cumsum(u) - 1.0 / vol) / k
    r = np.nonzero(u - theta > 0)[0][-1]
    out = np.maximum(v - theta[r], 0.0)
    return GridDensity(P.dim, P.cells_per_axis, out)


def smooth_target(bank: FeatureBank, cells: int, amplitude: float = 0.8, seed: int = 0, n_anchors: int = 8) -> GridDensity:
    """Smooth positive 1-D density ``1 + amplitude * h / max|h|`` with ``h`` in the feature span.

    ``h`` is a random combination of features at uniform anchors, centered to
    zero mean on the grid, so ``P* - uniform`` lies (up to the centering
    constant) in the span of the kernel.
    """
    rng = make_rng(seed, "smooth_target")
    z = rng.random((n_anchors, bank.d_in))
    g = rng.standard_normal(n_anchors)
    x = grid_centers(bank.d_in, cells)
    h = kernel(bank, x, z) @ g
    h = h - h.mean()
    vals = 1.0 + amplitude * h / np.max(np.abs(h))
    return GridDensity(bank.d_in, cells, vals / (vals.sum() * cells ** (-bank.d_in)))


def operator_lambda_max(bank: FeatureBank, target: GridDensity) -> float:
    K = gram_operator(bank, GridDensity.uniform(target.dim, target.cells_per_axis))
    return float(np.linalg.eigvalsh(0.5 * (K + K.T))[-1])


def _target_term(bank, K, target) -> np.ndarray:
    """``K P*`` at the cell centers; particle targets are summed exactly."""
    if isinstance(target, GridDensity):
        return K @ target.values
    if isinstance(target, ParticleMeasure):
        x = grid_centers(target.dim, _cells_from(K, target.dim))
        return kernel(bank, x, target.points) @ target.weights
    raise TypeError(f"unsupported target {type(target).__name__}")


def _cells_from(K, dim) -> int:
    return int(round(K.shape[0] ** (1.0 / dim)))


def _step_times(dt: float, T: float, log_times: Optional[Iterable[float]]) -> tuple[int, list[int]]:
    steps = int(round(T / dt))
    if log_times is None:
        idx = list(range(steps + 1))
    else:
        idx = sorted({min(steps, max(0, int(round(t / dt)))) for t in log_times})
    return steps, idx


def mmd_gan_flow(
    P0: DensityIterate,
    target,
    bank: FeatureBank,
    dt: float,
    T: float,
    log_times: Optional[Iterable[float]] = None,
    grid: Optional[GridDensity] = None,
) -> list[DensityIterate]:
    """Euler integration of ``dP/dt = -K (P - P*)``; returns iterates at ``log_times``.

    ``target`` is a grid density or a particle set (empirical flow). For a
    particle target pass ``grid`` (or rely on ``P0``'s grid).
    """
    g = GridDensity.uniform(P0.dim, P0.cells_per_axis) if grid is None else grid
    K = gram_operator(bank, g)
    lam = float(np.linalg.eigvalsh(0.5 * (K + K.T))[-1])
    if not dt > 0 or dt * lam >= 2.0:
        raise ValueError(f"unstable step: dt * lambda_max = {dt * lam:.3g} must be in (0, 2)")
    if isinstance(target, GridDensity) and not target.same_grid(g):
        raise ValueError("target and iterate must share a grid")
    b = _target_term(bank, K, target)
    steps, record = _step_times(dt, T, log_times)
    rec = set(record)
    P = np.array(P0.values, dtype=float)
    scale = max(1.0, float(np.max(np.abs(P))), float(np.max(np.abs(b))) / max(lam, 1e-300))
    out = []
    for k in range(steps + 1):
        if k in rec:
            out.append(DensityIterate(P0.dim, P0.cells_per_axis, P, k * dt))
        if k == steps:
            break
        P = P - dt * (K @ P - b)
        if not np.all(np.isfinite(P)) or np.max(np.abs(P)) > 1e6 * scale:
            raise DivergenceError("diverged")
    return out


def spectral_solution(P0: DensityIterate, target: GridDensity, bank: FeatureBank, t) -> list[DensityIterate]:
    """Closed form ``P_t = P* + sum_i e^{-lam_i t} <P0 - P*, phi_i> phi_i``.

    Eigenpairs come from the symmetrized operator ``D^{1/2} k D^{1/2}`` with
    ``D`` the cell masses, so ``phi_i`` are orthonormal in ``L^2``.
    """
    x = target.centers()
    mass = np.full(target.n_cells, target.cell_volume)
    s = np.sqrt(mass)
    S = kernel(bank, x, x) * s[:, None] * s[None, :]
    lam, U = np.linalg.eigh(0.5 * (S + S.T))
    lam = np.maximum(lam, 0.0)
    c0 = U.T @ (s * (P0.values - target.values))
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = []
    for tt in ts:
        vals = target.values + (U @ (np.exp(-lam * tt) * c0)) / s
        out.append(DensityIterate(target.dim, target.cells_per_axis, vals, float(tt)))
    return out


def log_times_geometric(dt: float, T: float, count: int = 80) -> np.ndarray:
    """Logging grid: ``0`` plus ``count`` geometrically spaced times in ``[dt, T]``."""
    return np.concatenate([[0.0], np.geomspace(dt, T, count)])


def mmd_gan_experiment(
    target: GridDensity,
    n: int,
    bank: FeatureBank,
    dt: float,
    T: float,
    seed: int,
    log_times: Optional[Sequence[float]] = None,
) -> TrajectoryLog:
    """Population and empirical flows from the uniform density.

    Logs ``t, mmd2, w2, w2_empirical`` where ``mmd2`` and ``w2`` follow the
    population flow and ``w2_empirical`` the flow driven by ``n`` samples of
    ``target``; both W2 errors are against ``target`` after projection.
    """
    if target.dim != 1:
        raise ValueError("the W2 test error needs a one-dimensional target")
    if log_times is None:
        log_times = log_times_geometric(dt, T)
    P0 = DensityIterate.from_grid(GridDensity.uniform(1, target.cells_per_axis))
    pop = mmd_gan_flow(P0, target, bank, dt, T, log_times)
    parts = sample(target, n, seed)
    emp = mmd_gan_flow(P0, parts, bank, dt, T, log_times)
    log = TrajectoryLog(list(MMD_COLUMNS))
    for p, e in zip(pop, emp):
        log.append(
            p.t,
            mmd2(p, target, bank),
            w2_1d(target, project_simplex(p)),
            w2_1d(target, project_simplex(e)),
        )
    log.extras["samples"] = parts
    return log


@dataclass(frozen=True)
class CurveSummary:
    n: int
    t_star: float
    w2_min: float
    w2_final: float

    @property
    def interior(self) -> bool:
        return self.t_star > 0 and self.w2_min < self.w2_final


def summarize_empirical(log: TrajectoryLog, n: int) -> CurveSummary:
    t, w = log["t"], log["w2_empirical"]
    i = int(np.argmin(w))
    return CurveSummary(n, float(t[i]), float(w[i]), float(w[-1]))
