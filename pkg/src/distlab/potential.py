"""Bias-potential density model ``P_V = e^{-V} base / Z``.

The potential ``V`` is a scalar random-feature function. Training runs
coefficient gradient flow on

    L(V) = int V dP* + ln int e^{-V} dbase,

whose functional gradient (as a density relative to ``base``) is
``P* - P_V``. Targets are either grid densities (population loss) or
particle sets (empirical loss). The test error is always ``KL(P* || P_V)``
against a grid reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import logsumexp
from scipy.sparse.linalg import LinearOperator, eigsh

from .measures import GridDensity, ParticleMeasure, sample, support_points
from .metrics import kl
from .rfm import DivergenceError, FeatureBank, RfmFunction, feature_moments, parameter_norm
from .rng import make_rng
from .trajectory import TrajectoryLog

Target = Union[GridDensity, ParticleMeasure]
BP_COLUMNS = ["t", "loss", "kl", "param_norm"]


# -- densities from potential values ----------------------------------------


def density_from_values(v: np.ndarray, base: GridDensity) -> GridDensity:
    """Normalized ``e^{-v} base`` for potential values ``v`` at the cell centers."""
    v = np.asarray(v, dtype=float).reshape(-1)
    with np.errstate(divide="ignore"):
        logw = -v + np.log(base.values)
    logw = logw - np.max(logw)
    w = np.exp(logw)
    return GridDensity(base.dim, base.cells_per_axis, w / (w.sum() * base.cell_volume))


def potential_values(V: RfmFunction, base: GridDensity) -> np.ndarray:
    return V(base.centers())[:, 0]


def density_of(V: RfmFunction, base: GridDensity) -> GridDensity:
    return density_from_values(potential_values(V, base), base)


@dataclass(frozen=True)
class BoltzmannState:
    potential: RfmFunction
    base: GridDensity
    density: GridDensity = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "density", density_of(self.potential, self.base))


# -- loss and gradient --------------------------------------------------------


def _log_partition(v: np.ndarray, base: GridDensity) -> float:
    with np.errstate(divide="ignore"):
        return float(logsumexp(-v + np.log(base.masses)))


def loss_from_values(v_grid: np.ndarray, target_term: float, base: GridDensity) -> float:
    """``target_term + ln sum e^{-v} base_mass`` with ``target_term = int V dP*``."""
    return float(target_term) + _log_partition(np.asarray(v_grid, float), base)


def bp_loss(V: RfmFunction, target: Target, base: GridDensity) -> float:
    pts, mass = support_points(target)
    return loss_from_values(potential_values(V, base), float(mass @ V(pts)[:, 0]), base)


@dataclass(frozen=True)
class GridField:
    """Piecewise-constant signed function on a grid; callable on points by cell lookup."""

    dim: int
    cells_per_axis: int
    values: np.ndarray = field(repr=False)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        n = self.cells_per_axis
        idx = np.clip(np.floor(x * n).astype(int), 0, n - 1)
        flat = idx[:, 0] if self.dim == 1 else idx[:, 0] * n + idx[:, 1]
        return self.values[flat]

    def integral(self) -> float:
        return float(np.sum(self.values)) * float(self.cells_per_axis) ** (-self.dim)


def grad_field_from_values(v: np.ndarray, target: GridDensity, base: GridDensity) -> GridField:
    pv = density_from_values(v, base)
    g = (target.values - pv.values) / base.values
    return GridField(base.dim, base.cells_per_axis, g)


def bp_grad_field(V: RfmFunction, target: GridDensity, base: GridDensity) -> GridField:
    """Functional gradient ``P* - P_V`` as a density relative to ``base``.

    Particle targets have no density on the grid; use ``bp_coeff_gradient``.
    """
    if not isinstance(target, GridDensity):
        raise TypeError("gradient field needs a grid target; use bp_coeff_gradient for particles")
    if not target.same_grid(base):
        raise ValueError("target and base must share a grid")
    return grad_field_from_values(potential_values(V, base), target, base)


def bp_coeff_gradient(V: RfmFunction, target: Target, base: GridDensity) -> np.ndarray:
    """``L^2(rho)`` coefficient gradient ``int sigma_j dP* - int sigma_j dP_V``, shape ``(m, 1)``."""
    pv = density_of(V, base)
    g = feature_moments(V.bank, target) - feature_moments(V.bank, pv)
    return g[:, None]


# -- trainers -----------------------------------------------------------------


def gram_lambda_max(bank: FeatureBank, support: Target) -> float:
    """Largest eigenvalue of the Gram quadrature operator over ``support``."""
    pts, mass = support_points(support)
    phi = bank.features(pts)
    n, m = phi.shape
    s = np.sqrt(mass)
    A = phi * s[:, None]  # sym operator = A A^T / m, same nonzero spectrum as A^T A / m
    if min(n, m) <= 512:
        small = (A.T @ A) if m <= n else (A @ A.T)
        return float(np.linalg.eigvalsh(small / m)[-1])
    op = LinearOperator((m, m), matvec=lambda v: A.T @ (A @ v) / m, dtype=float)
    return float(eigsh(op, k=1, which="LA", return_eigenvectors=False, tol=1e-10)[0])


@dataclass
class _BPProblem:
    bank: FeatureBank
    base: GridDensity
    phi_grid: np.ndarray
    target_moments: np.ndarray
    reference: Optional[GridDensity]

    @classmethod
    def build(cls, target, base, bank, reference):
        if reference is None and isinstance(target, GridDensity):
            reference = target
        if reference is not None and not reference.same_grid(base):
            raise ValueError("reference and base must share a grid")
        return cls(bank, base, bank.features(base.centers()), feature_moments(bank, target), reference)

    def values(self, a: np.ndarray) -> np.ndarray:
        return self.phi_grid @ a / self.bank.m

    def loss(self, a: np.ndarray, v: np.ndarray) -> float:
        return loss_from_values(v, float(self.target_moments @ a) / self.bank.m, self.base)

    def grad(self, v: np.ndarray) -> np.ndarray:
        pv = density_from_values(v, self.base)
        return self.target_moments - pv.masses @ self.phi_grid

    def test_kl(self, v: np.ndarray) -> float:
        if self.reference is None:
            return math.nan
        return kl(self.reference, density_from_values(v, self.base))


def _check_stable(bank, base, dt):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    lam = gram_lambda_max(bank, base)
    if dt * lam >= 2.0:
        raise ValueError(f"unstable step: dt * lambda_max = {dt * lam:.3g} >= 2")
    return lam


def _run(prob: _BPProblem, dt: float, T: float, log_every: int, post_step=None) -> TrajectoryLog:
    log = TrajectoryLog(list(BP_COLUMNS))
    a = np.zeros(prob.bank.m)
    steps = int(round(T / dt))
    for k in range(steps + 1):
        v = prob.values(a)
        loss = prob.loss(a, v)
        if not (math.isfinite(loss) and np.all(np.isfinite(a))):
            log.extras["potential"] = RfmFunction(prob.bank, a)
            err = DivergenceError("diverged")
            err.log = log
            raise err
        if k % log_every == 0 or k == steps:
            log.append(k * dt, loss, prob.test_kl(v), parameter_norm(a))
        if k == steps:
            break
        a = a - dt * prob.grad(v)
        if post_step is not None:
            a = post_step(a)
    log.extras["potential"] = RfmFunction(prob.bank, a)
    return log


def train_bp(
    target: Target,
    base: GridDensity,
    bank: FeatureBank,
    dt: float,
    T: float,
    log_every: int = 1,
    reference: Optional[GridDensity] = None,
) -> TrajectoryLog:
    """Euler gradient flow on the bias-potential loss from ``a = 0``.

    Logs ``t, loss, kl, param_norm``; ``kl`` is measured against ``reference``
    (defaults to a grid target, NaN if neither is available). The final
    potential is stored in ``log.extras["potential"]``.
    """
    _check_stable(bank, base, dt)
    prob = _BPProblem.build(target, base, bank, reference)
    return _run(prob, dt, T, max(1, int(log_every)))


@dataclass(frozen=True)
class Regularization:
    """``ivanov``: keep ``parameter_norm <= strength``; ``tikhonov``: add ``strength/sqrt(n) * norm``."""

    mode: str
    strength: float

    def __post_init__(self):
        if self.mode not in ("ivanov", "tikhonov"):
            raise ValueError(f"unknown regularization {self.mode!r}")
        if not self.strength > 0:
            raise ValueError("regularization strength must be positive")


def ivanov_project(a: np.ndarray, R: float) -> np.ndarray:
    nrm = parameter_norm(a)
    return a if nrm <= R else a * (R / nrm)


def tikhonov_prox(a: np.ndarray, step: float) -> np.ndarray:
    """Proximal map of ``step * parameter_norm`` (group soft-threshold)."""
    nrm = parameter_norm(a)
    if nrm <= step:
        return np.zeros_like(a)
    return a * (1.0 - step / nrm)


def train_bp_regularized(
    target_particles: ParticleMeasure,
    base: GridDensity,
    bank: FeatureBank,
    reg: Regularization,
    dt: float,
    T: float,
    log_every: int = 1,
    reference: Optional[GridDensity] = None,
) -> TrajectoryLog:
    """Regularized empirical training.

    The Tikhonov penalty ``(lam/sqrt(n)) * parameter_norm`` is handled by a
    proximal step after each gradient step, which is the forward-backward
    discretization of the subgradient flow and keeps ``V = 0`` exactly when
    the penalty dominates.
    """
    _check_stable(bank, base, dt)
    prob = _BPProblem.build(target_particles, base, bank, reference)
    if reg.mode == "ivanov":
        post = lambda a: ivanov_project(a, reg.strength)  # noqa: E731
    else:
        lam_n = reg.strength / math.sqrt(len(target_particles))
        post = lambda a: tikhonov_prox(a, dt * lam_n)  # noqa: E731
    log = _run(prob, dt, T, max(1, int(log_every)), post)
    # report the regularized objective
    if reg.mode == "tikhonov":
        lam_n = reg.strength / math.sqrt(len(target_particles))
        j = log.columns.index("loss")
        pj = log.columns.index("param_norm")
        for r in log.rows:
            r[j] += lam_n * r[pj]
    return log


# -- planted targets and experiment helpers -----------------------------------


def planted_potential(bank: FeatureBank, norm: float = 1.0, seed: int = 0, n_anchors: int = 16) -> RfmFunction:
    """Random potential with exact representation in the bank and given ``parameter_norm``.

    Coefficients are ``a* = Phi(z)^T g`` for ``n_anchors`` uniform anchors ``z``
    and Gaussian ``g``, rescaled to ``norm``. Drawing ``a*`` i.i.d. instead
    gives an almost constant potential because independent coefficients
    average out over the features.
    """
    rng = make_rng(seed, "planted")
    z = rng.random((n_anchors, bank.d_in))
    g = rng.standard_normal(n_anchors)
    a = bank.features(z).T @ g
    a *= norm / parameter_norm(a)
    return RfmFunction(bank, a)


@dataclass(frozen=True)
class MemorizationSummary:
    n: int
    t_star: float
    kl_min: float
    kl_final: float
    norm_at_min: float
    norm_final: float

    @property
    def interior(self) -> bool:
        return self.kl_min < self.kl_final and self.t_star > 0

    def as_dict(self) -> dict:
        return {"n": self.n, "t_star": self.t_star, "kl_min": self.kl_min, "kl_final": self.kl_final}


def summarize_memorization(log: TrajectoryLog, n: int) -> MemorizationSummary:
    t, k, nrm = log["t"], log["kl"], log["param_norm"]
    i = int(np.argmin(k))
    return MemorizationSummary(n, float(t[i]), float(k[i]), float(k[-1]), float(nrm[i]), float(nrm[-1]))


def empirical_run(
    reference: GridDensity,
    base: GridDensity,
    bank: FeatureBank,
    n: int,
    seed: int,
    dt: float,
    T: float,
    log_every: int = 1,
) -> tuple[TrajectoryLog, MemorizationSummary]:
    """Train on ``n`` samples of ``reference`` and summarize the KL curve."""
    pts = sample(reference, n, seed)
    log = train_bp(pts, base, bank, dt, T, log_every, reference=reference)
    return log, summarize_memorization(log, n)


def early_stopping_sweep(
    reference: GridDensity,
    base: GridDensity,
    bank: FeatureBank,
    ns,
    seeds,
    dt: float,
    T: float,
    log_every: int = 1,
) -> list[MemorizationSummary]:
    out = []
    for n in ns:
        for s in seeds:
            out.append(empirical_run(reference, base, bank, int(n), int(s), dt, T, log_every)[1])
    return out


def loglog_slope(ns, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(ns)``."""
    return float(np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(values, float)), 1)[0])
