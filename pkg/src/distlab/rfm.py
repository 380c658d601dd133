"""Random feature function spaces with a frozen, sampled first layer.

A bank of ``m`` features ``(w_j, b_j)`` discretizes the parameter law rho.
Functions are ``f(x) = (1/m) sum_j a_j sigma(w_j . x + b_j)`` with coefficient
matrix ``a`` of shape ``(m, k)``; ``parameter_norm`` is the discrete
``L^2(rho)`` norm of ``a`` and serves as the (upper-bound) proxy for the
RKHS norm.

Gradients with respect to ``a`` are expressed in the ``L^2(rho)`` geometry,
so a gradient-flow step reads ``a_j <- a_j - dt * int g(x) sigma_j(x) dmu``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .measures import GridDensity, ParticleMeasure, support_points
from .rng import make_rng

ACTIVATIONS = ("relu", "sigmoid")
LAWS = ("l1_sphere", "gaussian")


class DivergenceError(FloatingPointError):
    """Raised when a training trajectory produces non-finite values."""


def _relu(u):
    return np.maximum(u, 0.0)


def _sigmoid(u):
    # stable in both tails
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


_ACT = {"relu": _relu, "sigmoid": _sigmoid}


@dataclass(frozen=True)
class FeatureBank:
    weights: np.ndarray = field(repr=False)  # (m, d_in)
    biases: np.ndarray = field(repr=False)  # (m,)
    activation: str = "relu"
    law: str = "l1_sphere"
    seed: int | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.law not in LAWS:
            raise ValueError(f"unknown feature law {self.law!r}")
        w = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.biases, dtype=float).reshape(-1)
        if w.ndim != 2 or w.shape[0] != b.size:
            raise ValueError("weights must be (m, d_in) with one bias per row")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def m(self) -> int:
        return self.biases.size

    @property
    def d_in(self) -> int:
        return self.weights.shape[1]

    def features(self, x: np.ndarray) -> np.ndarray:
        """Feature matrix ``sigma(x W^T + b)`` of shape ``(n, m)``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, self.d_in) if self.d_in > 1 else x[:, None]
        if x.shape[1] != self.d_in:
            raise ValueError(
                f"input dimension {x.shape[1]} does not match bank dimension {self.d_in}"
            )
        return _ACT[self.activation](x @ self.weights.T + self.biases)


def draw_bank(
    d_in: int, m: int, activation: str = "relu", law: str = "l1_sphere", seed: int = 0
) -> FeatureBank:
    """Sample ``m`` i.i.d. features.

    ``l1_sphere``: direction uniform on ``{||w||_1 + |b| = 1}`` (normalized
    Laplace vectors). ``gaussian``: ``N(0, I / (d_in + 1))`` so the second
    moment of ``(w, b)`` is 1.
    """
    if m < 1:
        raise ValueError(f"feature count must be >= 1, got {m}")
    rng = make_rng(seed, "bank")
    if law == "l1_sphere":
        z = rng.laplace(size=(m, d_in + 1))
        z /= np.abs(z).sum(axis=1, keepdims=True)
    elif law == "gaussian":
        z = rng.standard_normal((m, d_in + 1)) / np.sqrt(d_in + 1)
    else:
        raise ValueError(f"unknown feature law {law!r}")
    return FeatureBank(z[:, :d_in], z[:, d_in], activation, law, seed)


@dataclass(frozen=True)
class RfmFunction:
    bank: FeatureBank
    coeffs: np.ndarray = field(repr=False)  # (m, k)

    def __post_init__(self):
        a = np.asarray(self.coeffs, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.shape[0] != self.bank.m:
            raise ValueError("one coefficient row per feature is required")
        object.__setattr__(self, "coeffs", a)

    @classmethod
    def zeros(cls, bank: FeatureBank, k: int = 1) -> "RfmFunction":
        return cls(bank, np.zeros((bank.m, k)))

    @property
    def out_dim(self) -> int:
        return self.coeffs.shape[1]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.bank.features(x) @ self.coeffs / self.bank.m

    def with_coeffs(self, coeffs: np.ndarray) -> "RfmFunction":
        return RfmFunction(self.bank, coeffs)


def evaluate(f: RfmFunction, x: np.ndarray) -> np.ndarray:
    """``(1/m) sum_j a_j sigma(w_j . x + b_j)``; rows of ``x`` are points."""
    return f(x)


def kernel(bank: FeatureBank, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Kernel matrix ``k(x_i, y_j) = (1/m) sum_l sigma_l(x_i) sigma_l(y_j)``."""
    return bank.features(x) @ bank.features(y).T / bank.m


def feature_moments(
    bank: FeatureBank, support: Union[GridDensity, ParticleMeasure], values=None
) -> np.ndarray:
    """``int g(x) sigma_j(x) dmu(x)`` for each feature; ``g`` defaults to 1.

    ``values`` may be an ``(n,)`` or ``(n, k)`` array of ``g`` at the support
    nodes. Returns shape ``(m,)`` or ``(m, k)``.
    """
    pts, mass = support_points(support)
    phi = bank.features(pts)
    if values is None:
        return mass @ phi
    g = np.asarray(values, dtype=float)
    if g.ndim == 1:
        return phi.T @ (mass * g)
    return phi.T @ (mass[:, None] * g)


def gram_operator(bank: FeatureBank, support: Union[GridDensity, ParticleMeasure]) -> np.ndarray:
    """Quadrature of ``K f(x) = int k(x, x') f(x') dmu(x')``: ``K[i, j] = k(x_i, x_j) mu_j``."""
    pts, mass = support_points(support)
    if pts.shape[0] == 0:
        raise ValueError("empty support")
    return kernel(bank, pts, pts) * mass[None, :]


def gram_spectrum(bank: FeatureBank, support) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of the symmetrized operator ``D^{1/2} k D^{1/2}`` (ascending).

    Eigenvectors ``u`` relate to eigenfunctions on the nodes by
    ``phi = D^{-1/2} u``, orthonormal in ``L^2(mu)``.
    """
    pts, mass = support_points(support)
    s = np.sqrt(mass)
    sym = kernel(bank, pts, pts) * s[:, None] * s[None, :]
    lam, u = np.linalg.eigh(0.5 * (sym + sym.T))
    return lam, u


def parameter_norm(f: Union[RfmFunction, np.ndarray]) -> float:
    a = f.coeffs if isinstance(f, RfmFunction) else np.asarray(f, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return float(np.sqrt(np.sum(a * a) / a.shape[0]))


def coefficient_gradient(
    f: RfmFunction,
    grad_values: np.ndarray,
    support: Union[GridDensity, ParticleMeasure],
) -> np.ndarray:
    """``L^2(rho)`` gradient of a loss whose functional gradient at the support nodes is ``grad_values``."""
    g = np.asarray(grad_values, dtype=float).reshape(-1, f.out_dim)
    G = feature_moments(f.bank, support, g)
    return G.reshape(f.coeffs.shape)


def gradient_step(
    f: RfmFunction,
    grad_f: Union[Callable[[np.ndarray], np.ndarray], np.ndarray],
    support: Union[GridDensity, ParticleMeasure],
    dt: float,
) -> RfmFunction:
    """One explicit Euler step of coefficient gradient flow.

    ``grad_f`` evaluates the functional gradient ``nabla_f L`` at points (or is
    the array of its values at the support nodes).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if callable(grad_f):
        pts, _ = support_points(support)
        g = grad_f(pts)
    else:
        g = grad_f
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise DivergenceError("diverged")
    return f.with_coeffs(f.coeffs - dt * coefficient_gradient(f, g, support))


@dataclass(frozen=True)
class TimeVelocityField:
    """Velocity ``V(x, tau)`` from an RFM on ``R^{d+1}`` (last input is ``tau``)."""

    inner: RfmFunction

    def __post_init__(self):
        if self.inner.bank.d_in != self.inner.out_dim + 1:
            raise ValueError("time velocity field needs input dim d+1 and output dim d")

    @classmethod
    def zeros(cls, bank: FeatureBank) -> "TimeVelocityField":
        return cls(RfmFunction.zeros(bank, bank.d_in - 1))

    @property
    def dim(self) -> int:
        return self.inner.out_dim

    def __call__(self, x: np.ndarray, tau) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (x.shape[0],))
        return self.inner(np.column_stack([x, tau]))

    def parameter_norm(self) -> float:
        return parameter_norm(self.inner)

    def flow_norm(self) -> float:
        return float(np.exp(self.parameter_norm()))


# -- CSV interchange ---------------------------------------------------------


def write_bank_csv(bank: FeatureBank, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j"] + [f"w{i}" for i in range(bank.d_in)] + ["b"])
        for j in range(bank.m):
            w.writerow([j] + [repr(float(v)) for v in bank.weights[j]] + [repr(float(bank.biases[j]))])


def write_coeffs_csv(f: RfmFunction, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j"] + [f"a{i}" for i in range(f.out_dim)])
        for j in range(f.bank.m):
            w.writerow([j] + [repr(float(v)) for v in f.coeffs[j]])


def _read_indexed(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = sorted((int(r[0]), [float(v) for v in r[1:]]) for r in reader)
    return np.array([r for _, r in rows])


def read_bank_csv(path, activation: str = "relu", law: str = "l1_sphere", seed=None) -> FeatureBank:
    data = _read_indexed(path)
    return FeatureBank(data[:, :-1], data[:, -1], activation, law, seed)


def read_coeffs_csv(path, bank: FeatureBank) -> RfmFunction:
    return RfmFunction(bank, _read_indexed(path))


def save_velocity_field(V: TimeVelocityField, stem) -> None:
    """Write ``<stem>.json`` header plus ``<stem>_bank.csv`` and ``<stem>_coeffs.csv``."""
    bank = V.inner.bank
    header = {"d": V.dim, "m": bank.m, "activation": bank.activation, "law": bank.law, "seed": bank.seed}
    with open(f"{stem}.json", "w") as fh:
        json.dump(header, fh, indent=2)
    write_bank_csv(bank, f"{stem}_bank.csv")
    write_coeffs_csv(V.inner, f"{stem}_coeffs.csv")


def load_velocity_field(stem) -> TimeVelocityField:
    with open(f"{stem}.json") as fh:
        header = json.load(fh)
    bank = read_bank_csv(f"{stem}_bank.csv", header["activation"], header["law"], header["seed"])
    if bank.m != header["m"] or bank.d_in != header["d"] + 1:
        raise ValueError("velocity field header does not match its bank")
    return TimeVelocityField(read_coeffs_csv(f"{stem}_coeffs.csv", bank))


# -- kernel regression by gradient flow ----------------------------------------


@dataclass(frozen=True)
class KernelRegression:
    """Square loss ``1/2 ||f - f*||^2_{L^2(mu)}`` over a fixed quadrature support."""

    bank: FeatureBank
    support: Union[GridDensity, ParticleMeasure]
    target: RfmFunction

    def loss(self, f: RfmFunction) -> float:
        pts, mass = support_points(self.support)
        r = f(pts) - self.target(pts)
        return float(0.5 * mass @ np.sum(r * r, axis=1))

    def euler(self, dt: float, times) -> list[RfmFunction]:
        """Coefficient gradient flow from ``a = 0``; snapshots at ``times``."""
        pts, mass = support_points(self.support)
        phi = self.bank.features(pts)
        wphi = phi * mass[:, None]
        y = self.target(pts)
        a = np.zeros_like(self.target.coeffs)
        marks = sorted({int(round(t / dt)) for t in times})
        out, k = [], 0
        for mk in marks:
            while k < mk:
                r = phi @ a / self.bank.m - y
                a = a - dt * (wphi.T @ r)
                k += 1
            if not np.all(np.isfinite(a)):
                raise DivergenceError("diverged")
            out.append(RfmFunction(self.bank, a.copy()))
        return out

    def spectral(self, times) -> list[np.ndarray]:
        """Node values from the eigenmode solution ``c_i(t) = (1 - e^{-lam_i t}) c*_i``."""
        pts, mass = support_points(self.support)
        lam, U = gram_spectrum(self.bank, self.support)
        s = np.sqrt(mass)
        cstar = U.T @ (s[:, None] * self.target(pts))
        out = []
        for t in times:
            c = (1.0 - np.exp(-np.maximum(lam, 0.0) * t))[:, None] * cstar
            out.append((U @ c) / s[:, None])
        return out
