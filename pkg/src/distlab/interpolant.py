"""Fixed-generator models: stochastic-interpolant flow matching and score diffusion.

Flow matching uses the linear path ``X_tau = (1 - tau) X0 + tau X1`` with
independent endpoints ``X0 ~ base`` and ``X1 ~ target``. The velocity
``V*(x, tau) = E[X1 - X0 | X_tau = x]`` transports the base onto the target
along ``dx/dtau = V*(x, tau)``.

Diffusion uses the variance-preserving forward SDE
``dX = -(beta/2) X dtau + sqrt(beta) dW`` with ``B(tau) = int_0^tau beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import logsumexp

from .measures import GaussianMeasure, ParticleMeasure, sample
from .rfm import DivergenceError, FeatureBank, RfmFunction, TimeVelocityField, parameter_norm
from .rng import make_rng
from .trajectory import TrajectoryLog

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]
TAU_MIN = 1e-3


class UnsupportedPointError(ValueError):
    pass


class BlowUpError(DivergenceError):
    pass


@dataclass(frozen=True)
class InterpolantProblem:
    base: GaussianMeasure
    target: Union[ParticleMeasure, GaussianMeasure]

    def __post_init__(self):
        if self.base.dim != self.target.dim:
            raise ValueError("base and target must share a dimension")

    @property
    def dim(self) -> int:
        return self.base.dim


def _rows(x, d) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1, d)


def gaussian_velocity(base: GaussianMeasure, target: GaussianMeasure) -> Field:
    """Exact ``V*`` between diagonal Gaussians.

    Per coordinate, ``X_tau`` and ``X1 - X0`` are jointly Gaussian, so the
    conditional mean is linear: ``(mu1 - mu0) + c_tau / v_tau * (x - m_tau)``
    with ``m_tau = (1-tau) mu0 + tau mu1``, ``v_tau = (1-tau)^2 s0 + tau^2 s1``
    and ``c_tau = tau s1 - (1-tau) s0``.
    """
    m0, s0 = base.mean, base.covariance
    m1, s1 = target.mean, target.covariance

    def V(x, tau):
        x = _rows(x, m0.size)
        t = np.broadcast_to(np.asarray(tau, dtype=float), (x.shape[0],))[:, None]
        m_t = (1 - t) * m0 + t * m1
        v_t = (1 - t) ** 2 * s0 + t**2 * s1
        c_t = t * s1 - (1 - t) * s0
        return (m1 - m0) + c_t / v_t * (x - m_t)

    return V


def target_velocity_mc(
    prob: InterpolantProblem, x: np.ndarray, tau: float, n_mc: int, seed: int
) -> np.ndarray:
    """Self-normalized estimate of ``E[X1 - X0 | X_tau = x]``.

    Conditioning on ``X_tau = x`` pins ``X0 = (x - tau X1)/(1 - tau)``, so the
    conditional law of ``X1`` has weight proportional to the base density at
    that point. Draws of ``X1`` come from the target (all atoms, with their
    weights, for a particle target; ``n_mc`` samples otherwise). The estimate
    is exact for particle targets and consistent for Gaussian ones.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    d = prob.dim
    x = _rows(x, d)
    if isinstance(prob.target, ParticleMeasure):
        x1, w1 = prob.target.points, prob.target.weights
    else:
        x1 = sample(prob.target, n_mc, make_rng(seed, "velocity").integers(2**31)).points
        w1 = np.full(n_mc, 1.0 / n_mc)
    x0 = (x[:, None, :] - tau * x1[None, :, :]) / (1.0 - tau)  # (q, n, d)
    with np.errstate(divide="ignore"):
        logw = prob.base.log_density(x0.reshape(-1, d)).reshape(x.shape[0], -1) + np.log(w1)
    lse = logsumexp(logw, axis=1, keepdims=True)
    if not np.all(np.isfinite(lse)):
        raise UnsupportedPointError("unsupported point")
    w = np.exp(logw - lse)
    vel = (x1[None, :, :] - x[:, None, :]) / (1.0 - tau)
    return np.einsum("qn,qnd->qd", w, vel)


def _interp_batch(prob: InterpolantProblem, n: int, rng: np.random.Generator):
    d = prob.dim
    x0 = prob.base.mean + np.sqrt(prob.base.covariance) * rng.standard_normal((n, d))
    if isinstance(prob.target, GaussianMeasure):
        x1 = prob.target.mean + np.sqrt(prob.target.covariance) * rng.standard_normal((n, d))
    else:
        x1 = prob.target.points[rng.choice(len(prob.target), size=n, p=prob.target.weights)]
    tau = rng.random(n)
    xt = (1 - tau)[:, None] * x0 + tau[:, None] * x1
    return xt, tau, x1 - x0


def interpolant_loss(V: Field, prob: InterpolantProblem, n_mc: int, seed: int) -> float:
    """MC estimate of ``1/2 E |V(X_tau, tau) - (X1 - X0)|^2`` with ``tau ~ U[0,1]``."""
    xt, tau, y = _interp_batch(prob, n_mc, make_rng(seed, "interp_loss"))
    r = V(xt, tau) - y
    return float(0.5 * np.mean(np.sum(r * r, axis=1)))


def interpolant_coeff_gradient(V: TimeVelocityField, prob: InterpolantProblem, n_mc: int, seed: int) -> np.ndarray:
    """``L^2(rho)`` coefficient gradient of ``interpolant_loss`` on the same samples.

    Equals ``m`` times the Euclidean gradient with respect to the coefficients.
    """
    xt, tau, y = _interp_batch(prob, n_mc, make_rng(seed, "interp_loss"))
    F = V.inner.bank.features(np.column_stack([xt, tau]))
    r = F @ V.inner.coeffs / V.inner.bank.m - y
    return F.T @ r / n_mc


def train_interpolant(
    prob: InterpolantProblem,
    bank: FeatureBank,
    batch: int,
    dt: float,
    T: float,
    seed: int,
    log_every: int = 100,
    tail_fraction: float = 0.5,
) -> tuple[TimeVelocityField, TrajectoryLog]:
    """Minibatch gradient flow on the interpolant loss from zero coefficients.

    Each step draws a fresh batch. The returned field averages the
    coefficients over the last ``tail_fraction`` of steps (``0`` returns the
    final iterate); the log records the raw iterate.
    """
    if bank.d_in != prob.dim + 1:
        raise ValueError("bank input dimension must be d + 1")
    if not 0.0 <= tail_fraction < 1.0:
        raise ValueError("tail_fraction must lie in [0, 1)")
    steps = int(round(T / dt))
    tail_start = steps - int(round(tail_fraction * steps)) if tail_fraction > 0 else steps
    rng = make_rng(seed, "interp_train")
    a = np.zeros((bank.m, prob.dim))
    abar = np.zeros_like(a)
    log = TrajectoryLog(["t", "loss", "param_norm"])
    for k in range(1, steps + 1):
        xt, tau, y = _interp_batch(prob, batch, rng)
        F = bank.features(np.column_stack([xt, tau]))
        r = F @ a / bank.m - y
        loss = 0.5 * float(np.mean(np.sum(r * r, axis=1)))
        if not math.isfinite(loss):
            log.extras["field"] = TimeVelocityField(RfmFunction(bank, a))
            err = DivergenceError("diverged")
            err.log = log
            raise err
        a = a - dt * (F.T @ r) / batch
        if k > tail_start:
            abar += a
        if k % log_every == 0 or k == steps:
            log.append(k * dt, loss, parameter_norm(a))
    coeffs = abar / (steps - tail_start) if steps > tail_start else a
    field = TimeVelocityField(RfmFunction(bank, coeffs))
    log.extras["field"] = field
    return field, log


def fit_growth_exponent(t: np.ndarray, norms: np.ndarray) -> float:
    """Slope of ``log norm`` against ``log t`` over the points with ``t, norm > 0``."""
    t, norms = np.asarray(t, float), np.asarray(norms, float)
    keep = (t > 0) & (norms > 0)
    return float(np.polyfit(np.log(t[keep]), np.log(norms[keep]), 1)[0])


# -- ODE and SDE integration --------------------------------------------------


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise BlowUpError("blow-up")


def rk4(field: Field, x: np.ndarray, t0: float, t1: float, steps: int) -> np.ndarray:
    """Classical RK4 for ``dx/dt = field(x, t)`` with ``steps`` uniform steps."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    h = (t1 - t0) / steps
    x = np.array(x, dtype=float)
    shape = x.shape
    x = x.reshape(shape[0], -1) if x.ndim > 1 else x[:, None]
    for i in range(steps):
        t = t0 + i * h
        k1 = field(x, t)
        k2 = field(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = field(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = field(x + h * k3, t + h)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        _check_finite(x)
    return x.reshape(shape)


def flow_transport(V: Field, x0: np.ndarray, steps: int = 100) -> np.ndarray:
    """Integrate ``dx/dtau = V(x, tau)`` from ``tau = 0`` to ``1``."""
    return rk4(V, x0, 0.0, 1.0, steps)


# -- diffusion -----------------------------------------------------------------


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear noise schedule ``beta(tau) = beta0 + (beta1 - beta0) tau / T``."""

    beta0: float = 2.0
    T: float = 5.0
    beta1: Optional[float] = None

    def __post_init__(self):
        b1 = self.beta0 if self.beta1 is None else self.beta1
        object.__setattr__(self, "beta1", float(b1))
        if self.beta0 <= 0 or b1 <= 0:
            raise ValueError("beta must be positive")
        if self.T <= 0:
            raise ValueError("T must be positive")

    def beta(self, tau):
        return self.beta0 + (self.beta1 - self.beta0) * np.asarray(tau, float) / self.T

    def B(self, tau):
        tau = np.asarray(tau, float)
        return self.beta0 * tau + 0.5 * (self.beta1 - self.beta0) * tau**2 / self.T


def diffusion_forward_law(sched: DiffusionSchedule, x0, tau: float) -> GaussianMeasure:
    """Law of ``X_tau`` given ``X_0 = x0``; at ``tau = 0`` the variance is the smallest positive float."""
    if not 0.0 <= tau <= sched.T:
        raise ValueError(f"tau must lie in [0, {sched.T}]")
    B = float(sched.B(tau))
    x0 = np.atleast_1d(np.asarray(x0, float))
    var = max(-math.expm1(-B), np.finfo(float).tiny)
    return GaussianMeasure(math.exp(-B / 2) * x0, np.full(x0.shape, var))


def simulate_forward(sched: DiffusionSchedule, x0, tau: float, n: int, dt: float, seed: int) -> np.ndarray:
    """Euler-Maruyama paths of the forward SDE from ``x0`` up to ``tau``."""
    x0 = np.atleast_1d(np.asarray(x0, float))
    rng = make_rng(seed, "forward_sde")
    steps = max(1, int(round(tau / dt)))
    h = tau / steps
    x = np.tile(x0, (n, 1))
    for i in range(steps):
        b = float(sched.beta(i * h))
        x = x - 0.5 * b * x * h + math.sqrt(b * h) * rng.standard_normal(x.shape)
    return x


def gaussian_score(sched: DiffusionSchedule, target: GaussianMeasure) -> Field:
    """``grad log P_tau`` when the data law is Gaussian (``P_tau`` stays Gaussian)."""
    mu, s2 = target.mean, target.covariance

    def s(x, tau):
        x = _rows(x, mu.size)
        B = np.broadcast_to(sched.B(tau), (x.shape[0],))[:, None]
        e = np.exp(-B)
        return -(x - np.sqrt(e) * mu) / (e * s2 + 1.0 - e)

    return s


def reverse_generate(
    sched: DiffusionSchedule,
    score: Field,
    mode: str,
    n: int,
    steps: int,
    seed: int,
    dim: int = 1,
) -> ParticleMeasure:
    """Integrate the reverse-time dynamics from ``tau = T`` down to ``0``.

    ``sde``: Euler-Maruyama on ``X <- X + h (beta/2)(X + 2 s) + sqrt(beta h) xi``.
    ``ode``: RK4 on ``dX/dtau = -(beta/2)(X + s)`` run backwards in time.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = make_rng(seed, "reverse", mode)
    x = rng.standard_normal((n, dim))
    T = sched.T
    if mode == "ode":
        def f(x, tau):
            return -0.5 * float(sched.beta(tau)) * (x + score(x, tau))

        x = rk4(f, x, T, 0.0, steps)
    elif mode == "sde":
        h = T / steps
        for i in range(steps):
            tau = T - i * h
            b = float(sched.beta(tau))
            x = x + h * 0.5 * b * (x + 2.0 * score(x, tau)) + math.sqrt(b * h) * rng.standard_normal(x.shape)
            _check_finite(x)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ParticleMeasure.uniform(x)


def score_matching_loss(
    s: Field,
    target,
    sched: DiffusionSchedule,
    lam: Callable[[np.ndarray], np.ndarray] = lambda tau: np.ones_like(tau),
    n_mc: int = 10_000,
    seed: int = 0,
    tau_min: float = TAU_MIN,
) -> float:
    """MC estimate of the weighted denoising loss with ``tau ~ U[tau_min, T]``."""
    rng = make_rng(seed, "score_loss")
    x0 = sample(target, n_mc, int(rng.integers(2**31))).points
    d = x0.shape[1]
    tau = tau_min + (sched.T - tau_min) * rng.random(n_mc)
    omega = rng.standard_normal((n_mc, d))
    B = sched.B(tau)[:, None]
    sd = np.sqrt(-np.expm1(-B))
    xt = np.exp(-B / 2) * x0 + sd * omega
    r = s(xt, tau) + omega / sd
    return float(np.mean(0.5 * np.asarray(lam(tau), float) * np.sum(r * r, axis=1)))
