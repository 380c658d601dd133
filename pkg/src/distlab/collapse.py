"""Mode-collapse toy games and one-dimensional Wasserstein landscape dynamics.

Toy games: generator ``G(x) = a x`` against a one-parameter discriminator
``D(x) = b phi(x)``. In the first game the continuous dynamics are the damped
linear system

    a' = -b/2,    b' = (a - 1)/2 - c b,

and collapse means reaching ``a = 0``. The second game is studied through
its explicit discretization with learning rate ``gamma``, its modified
equation, and the energy ``H(a, b) = b^2/2 + (a^2 - 1)/4 - log(a)/2``.

Landscape: a generator ``G`` on base nodes ``z`` in ``[0,1]`` flows under
the generalized W2 gradient ``dG/dt = m_t(G) - G`` where ``m_t`` is the
conditional mean of the monotone transport plan. Because ``m_t o G_t`` stays
equal to ``m_0 o G_0``, the trajectory is
``G_t = e^{-t} G_0 + (1 - e^{-t}) m_0 o G_0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .measures import GridDensity, ParticleMeasure
from .metrics import w2_1d
from .trajectory import TrajectoryLog

CLUSTER_TOL = 1e-9
STATIONARY_TOL = 1e-9
UNDERFLOW_A = 1e-12


@dataclass(frozen=True)
class ToyGameState:
    a: float
    b: float
    c: float = 0.0
    phi: str = "abs"
    collapsed: bool = False

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("regularization c must be nonnegative")
        if self.phi not in ("abs", "half_square"):
            raise ValueError(f"unknown discriminator feature {self.phi!r}")


# -- first game --------------------------------------------------------------


def _check_case1(c):
    if not 0.0 <= c < 1.0:
        raise ValueError("c must lie in [0, 1)")


def case1_rhs(a, b, c):
    return -0.5 * b, 0.5 * (a - 1.0) - c * b


def case1_closed_form(a0: float, c: float, t, verbatim_b: bool = False):
    """Solution from ``(a0, 0)``.

    The ``b`` amplitude is ``(a0 - 1)/sqrt(1 - c^2)``, the value forced by
    ``b(0) = 0`` and ``b'(0) = (a0 - 1)/2``. ``verbatim_b`` swaps in the
    amplitude ``a0/sqrt(1 - c^2)`` for comparison.
    """
    _check_case1(c)
    t = np.asarray(t)
    t = t.astype(complex) if np.iscomplexobj(t) else t.astype(float)  # complex-step friendly
    r = math.sqrt(1.0 - c * c)
    damp = np.exp(-0.5 * c * t)
    ph = 0.5 * r * t
    a = 1.0 + (a0 - 1.0) * damp * (np.cos(ph) + (c / r) * np.sin(ph))
    amp = (a0 if verbatim_b else a0 - 1.0) / r
    b = amp * damp * np.sin(ph)
    return a, b


def case1_threshold(c: float) -> float:
    """Smallest ``a0`` whose trajectory reaches ``a = 0`` in the first half-period."""
    _check_case1(c)
    return 1.0 + math.exp(c * math.pi / math.sqrt(1.0 - c * c))


def case1_half_period(c: float) -> float:
    return 2.0 * math.pi / math.sqrt(1.0 - c * c)


@dataclass(frozen=True)
class Case1Outcome:
    collapsed: bool
    t_collapse: Optional[float]
    min_a: float

    @property
    def label(self) -> str:
        return "collapsed" if self.collapsed else "survived"


def detect_collapse_case1(a0: float, c: float, horizon: float, step: float = 1e-3) -> Case1Outcome:
    """First sampled time with ``a_t <= 0`` on a uniform grid of spacing ``step``."""
    if a0 <= 0:
        raise ValueError("a0 must be positive")
    _check_case1(c)
    t = np.arange(0.0, horizon + 0.5 * step, step)
    a, _ = case1_closed_form(a0, c, t)
    hit = np.nonzero(a <= 0)[0]
    if hit.size:
        i = int(hit[0])
        return Case1Outcome(True, float(t[i]), float(a[: i + 1].min()))
    return Case1Outcome(False, None, float(a.min()))


def rk4_case1(a0: float, b0: float, c: float, t1: float, steps: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """RK4 reference trajectory of the first game."""
    h = t1 / steps
    ts = np.linspace(0.0, t1, steps + 1)
    A = np.empty(steps + 1)
    Bv = np.empty(steps + 1)
    a, b = float(a0), float(b0)
    A[0], Bv[0] = a, b
    for i in range(steps):
        k1 = case1_rhs(a, b, c)
        k2 = case1_rhs(a + 0.5 * h * k1[0], b + 0.5 * h * k1[1], c)
        k3 = case1_rhs(a + 0.5 * h * k2[0], b + 0.5 * h * k2[1], c)
        k4 = case1_rhs(a + h * k3[0], b + h * k3[1], c)
        a += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        b += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        A[i + 1], Bv[i + 1] = a, b
    return ts, A, Bv


# -- second game -------------------------------------------------------------


def energy(a, b):
    a = np.asarray(a, dtype=float)
    return 0.5 * np.asarray(b) ** 2 + 0.25 * (a * a - 1.0) - 0.5 * np.log(a)


def case2_step(a: float, b: float, c: float, gamma: float) -> tuple[float, float]:
    """One simultaneous gradient step (both updates use the old ``a, b``)."""
    return a - gamma * a * b / 3.0, b + gamma * ((a * a - 1.0) / 6.0 - c * b)


def case2_discrete(
    a0: float,
    b0: float,
    c: float,
    gamma: float,
    max_steps: int,
    log_every: int = 1,
) -> TrajectoryLog:
    """Iterate the discrete game; log ``step, a, b, H`` every ``log_every`` steps.

    Stops when ``a <= 1e-12`` (collapse by underflow of ``a``) or after
    ``max_steps``. ``extras`` records ``collapsed``, ``steps`` and
    ``first_below`` (first step with ``a < 1e-8``, or ``None``).
    """
    if a0 <= 0 or gamma <= 0:
        raise ValueError("need a0 > 0 and gamma > 0")
    log = TrajectoryLog(["step", "a", "b", "H"])
    a, b = float(a0), float(b0)
    first_below = None
    collapsed = False
    k = 0
    log.append(0, a, b, float(energy(a, b)))
    while k < max_steps:
        a, b = case2_step(a, b, c, gamma)
        k += 1
        if first_below is None and a < 1e-8:
            first_below = k
        if a <= UNDERFLOW_A:
            collapsed = True
            break
        if k % log_every == 0:
            log.append(k, a, b, float(energy(a, b)))
    if log.rows[-1][0] != k:
        log.append(k, a, b, float(energy(a, b)) if a > 0 else math.inf)
    log.extras.update(collapsed=collapsed, steps=k, first_below=first_below)
    return log


def case2_modified_ode(a, b, c: float, gamma: float):
    """Right-hand side of the first-order modified equation of the discrete game."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    da = -a * b / 3.0 + gamma * (-a * b * b / 18.0 + a * (a * a - 1.0) / 36.0 - c * a * b / 6.0)
    db = (a * a - 1.0) / 6.0 - c * b + gamma * (a * a * b / 18.0 + c * (a * a - 1.0) / 12.0 - c * c * b / 2.0)
    return da, db


def energy_rate(a, b, c: float, gamma: float):
    """Closed form of ``dH/dt`` along the modified equation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return -c * b * b + gamma * ((a * a + 1.0) * b * b / 36.0 + (a * a - 1.0) ** 2 / 72.0 - c * c * b * b / 2.0)


def energy_rate_chain(a, b, c: float, gamma: float):
    """``dH/dt`` by the chain rule ``H_a a' + H_b b'``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    da, db = case2_modified_ode(a, b, c, gamma)
    return (0.5 * a - 0.5 / a) * da + b * db


def case2_rk4(a: float, b: float, c: float, gamma: float, t: float, steps: int = 64) -> tuple[float, float]:
    """Integrate the modified equation for time ``t``."""
    h = t / steps
    f = lambda a, b: case2_modified_ode(a, b, c, gamma)  # noqa: E731
    for _ in range(steps):
        k1 = f(a, b)
        k2 = f(a + 0.5 * h * k1[0], b + 0.5 * h * k1[1])
        k3 = f(a + 0.5 * h * k2[0], b + 0.5 * h * k2[1])
        k4 = f(a + h * k3[0], b + h * k3[1])
        a = a + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        b = b + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return float(a), float(b)


# -- landscape ---------------------------------------------------------------


def _quantile_integral(target: GridDensity):
    """Return ``I(u) = int_0^u Q(s) ds`` for the target's piecewise-linear quantile ``Q``."""
    if target.dim != 1:
        raise ValueError("landscape targets are one-dimensional")
    mass = target.masses
    keep = mass > 0
    n = target.cells_per_axis
    left = np.arange(n)[keep] / n
    q0, q1 = left, left + 1.0 / n
    mass = mass[keep] / mass.sum()
    u = np.concatenate([[0.0], np.cumsum(mass)])
    u[-1] = 1.0
    seg_int = mass * 0.5 * (q0 + q1)
    cum = np.concatenate([[0.0], np.cumsum(seg_int)])

    def I(uu):
        uu = np.clip(np.asarray(uu, dtype=float), 0.0, 1.0)
        k = np.clip(np.searchsorted(u, uu, side="right") - 1, 0, mass.size - 1)
        s = uu - u[k]
        slope = (q1[k] - q0[k]) / mass[k]
        return cum[k] + q0[k] * s + 0.5 * slope * s * s

    return I


def clusters(G: np.ndarray, tol: float = CLUSTER_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Stable sort order of ``G`` and the cluster label of each sorted position."""
    order = np.argsort(G, kind="stable")
    gs = G[order]
    labels = np.concatenate([[0], np.cumsum(np.diff(gs) > tol)])
    return order, labels


def conditional_mean_map(G: np.ndarray, target: GridDensity) -> np.ndarray:
    """``m o G`` at every node for the monotone plan from ``G#U`` to ``target``.

    Nodes carry mass ``1/N``; nodes whose values agree within ``1e-9`` form an
    atom that is matched to the union of their quantile blocks.
    """
    G = np.asarray(G, dtype=float)
    N = G.size
    I = _quantile_integral(target)
    order, labels = clusters(G)
    starts = np.concatenate([[0], np.nonzero(np.diff(labels))[0] + 1])
    ends = np.concatenate([starts[1:], [N]])
    block_mean = (I(ends / N) - I(starts / N)) / ((ends - starts) / N)
    out = np.empty(N)
    out[order] = block_mean[labels]
    return out


def monotone_map(target: GridDensity, n_nodes: int = 4096) -> np.ndarray:
    """Discrete optimal map: the target's mean over each node's quantile block."""
    I = _quantile_integral(target)
    e = np.arange(n_nodes + 1) / n_nodes
    return np.diff(I(e)) * n_nodes


def base_nodes(n_nodes: int = 4096) -> np.ndarray:
    return (np.arange(n_nodes) + 0.5) / n_nodes


@dataclass(frozen=True)
class Transport1DState:
    G: np.ndarray
    target: GridDensity

    def __post_init__(self):
        G = np.array(self.G, dtype=float).reshape(-1)
        if not np.all(np.isfinite(G)):
            raise ValueError("generator values must be finite")
        if self.target.dim != 1:
            raise ValueError("landscape targets are one-dimensional")
        G.setflags(write=False)
        object.__setattr__(self, "G", G)

    @property
    def z(self) -> np.ndarray:
        return base_nodes(self.G.size)

    def pushforward(self) -> ParticleMeasure:
        return ParticleMeasure.uniform(self.G)


def landscape_trajectory(state: Transport1DState, t) -> np.ndarray:
    m0 = conditional_mean_map(state.G, state.target)
    e = math.exp(-float(t))
    return e * state.G + (1.0 - e) * m0


def landscape_limit(state: Transport1DState) -> Transport1DState:
    """The ``t -> infinity`` endpoint ``m_0 o G_0`` of the flow."""
    return Transport1DState(conditional_mean_map(state.G, state.target), state.target)


def landscape_flow(init: Transport1DState, dt: float, T: float) -> TrajectoryLog:
    """Closed-form trajectory logged every ``dt`` up to ``T``.

    Columns: ``t``, ``w2`` to the target, and ``m_drift``, the sup-distance
    between the freshly recomputed ``m_t o G_t`` and ``m_0 o G_0``.
    """
    m0 = conditional_mean_map(init.G, init.target)
    log = TrajectoryLog(["t", "w2", "m_drift"])
    steps = int(round(T / dt))
    snaps = []
    for k in range(steps + 1):
        t = k * dt
        e = math.exp(-t)
        G = e * init.G + (1.0 - e) * m0
        if not np.all(np.isfinite(G)):
            raise FloatingPointError("non-finite generator")
        drift = float(np.max(np.abs(conditional_mean_map(G, init.target) - m0)))
        log.append(t, w2_1d(init.target, ParticleMeasure.uniform(G)), drift)
        snaps.append(G)
    log.extras["G"] = np.array(snaps)
    return log


def classify_stationary(state: Transport1DState) -> str:
    m = conditional_mean_map(state.G, state.target)
    resid = math.sqrt(float(np.mean((m - state.G) ** 2)))
    if resid > STATIONARY_TOL:
        return "not_stationary"
    _, labels = clusters(state.G)
    sizes = np.bincount(labels)
    return "generalized_saddle" if np.any(sizes > 1) else "global_min"
