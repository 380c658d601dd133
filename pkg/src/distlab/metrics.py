"""Test errors: KL on grids, exact 1-D and small-n Wasserstein-2, and MMD."""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.optimize import linear_sum_assignment

from .measures import GridDensity, ParticleMeasure, support_points
from .rfm import FeatureBank, feature_moments

EXACT_W2_MAX_N = 64


class SupportWarning(RuntimeWarning):
    """KL(p||q) is infinite because q vanishes where p has mass."""


def kl(p: GridDensity, q: GridDensity, return_flag: bool = False):
    """``KL(p || q)`` for grid densities on the same grid (``0 log 0 = 0``).

    Returns ``inf`` and warns when ``q`` vanishes on the support of ``p``;
    with ``return_flag`` the result is ``(value, support_ok)``.
    """
    if not p.same_grid(q):
        raise ValueError("kl requires densities on the same grid")
    pm = p.masses
    on = pm > 0
    ok = bool(np.all(q.values[on] > 0))
    if not ok:
        warnings.warn("q vanishes where p has mass", SupportWarning, stacklevel=2)
        val = math.inf
    else:
        val = float(np.sum(pm[on] * np.log(p.values[on] / q.values[on])))
    return (val, ok) if return_flag else val


# -- one-dimensional W2 ------------------------------------------------------
#
# Each 1-D measure is turned into a piecewise-linear quantile function on
# [0, 1] given as segments (u0, u1, q0, q1). Atoms give flat segments, grid
# cells give linear ramps across the cell. On the merged breakpoints both
# quantile functions are affine, so Simpson's rule integrates the squared
# difference exactly.


def _quantile_segments(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Breakpoints ``u`` (length s+1) and left/right quantile values per segment."""
    if isinstance(m, GridDensity):
        if m.dim != 1:
            raise ValueError("w2_1d needs one-dimensional measures")
        mass = m.masses
        keep = mass > 0
        h = 1.0 / m.cells_per_axis
        left = np.arange(m.cells_per_axis)[keep] * h
        q0, q1 = left, left + h
        mass = mass[keep]
    elif isinstance(m, ParticleMeasure):
        if m.dim != 1:
            raise ValueError("w2_1d needs one-dimensional measures")
        x = m.points[:, 0]
        order = np.argsort(x, kind="stable")
        x, mass = x[order], m.weights[order]
        keep = mass > 0
        q0 = q1 = x[keep]
        mass = mass[keep]
    else:
        raise TypeError(f"w2_1d does not handle {type(m).__name__}")
    u = np.concatenate([[0.0], np.cumsum(mass)])
    u /= u[-1]
    return u, q0, q1


def _eval_segments(u, q0, q1, s_idx, uu):
    du = u[s_idx + 1] - u[s_idx]
    frac = np.where(du > 0, (uu - u[s_idx]) / np.where(du > 0, du, 1.0), 0.0)
    return q0[s_idx] + frac * (q1[s_idx] - q0[s_idx])


def w2_1d(a, b) -> float:
    """Exact W2 between 1-D particle measures and/or piecewise-constant grid densities."""
    ua, a0, a1 = _quantile_segments(a)
    ub, b0, b1 = _quantile_segments(b)
    u = np.union1d(ua, ub)
    lo, hi = u[:-1], u[1:]
    width = hi - lo
    mid = 0.5 * (lo + hi)
    ia = np.clip(np.searchsorted(ua, mid, side="right") - 1, 0, a0.size - 1)
    ib = np.clip(np.searchsorted(ub, mid, side="right") - 1, 0, b0.size - 1)
    total = 0.0
    for uu, wgt in ((lo, 1.0), (mid, 4.0), (hi, 1.0)):
        da = _eval_segments(ua, a0, a1, ia, uu) - _eval_segments(ub, b0, b1, ib, uu)
        total = total + wgt * da * da
    val = float(np.sum(width * total) / 6.0)
    return math.sqrt(max(val, 0.0))


def w2_exact_small(a: ParticleMeasure, b: ParticleMeasure) -> float:
    """W2 between equal-size, equal-weight particle sets via optimal assignment."""
    n = len(a)
    if len(b) != n:
        raise ValueError("w2_exact_small needs equal sample sizes")
    if n > EXACT_W2_MAX_N:
        raise ValueError(f"size cap exceeded: {n} > {EXACT_W2_MAX_N}")
    for m in (a, b):
        if not np.allclose(m.weights, 1.0 / n, rtol=0, atol=1e-15):
            raise ValueError("w2_exact_small needs equal weights")
    cost = np.sum((a.points[:, None, :] - b.points[None, :, :]) ** 2, axis=2)
    r, c = linear_sum_assignment(cost)
    return math.sqrt(float(cost[r, c].sum()) / n)


# -- MMD ---------------------------------------------------------------------


def _signed_moments(bank: FeatureBank, m) -> np.ndarray:
    # grids may carry signed values (unprojected density iterates)
    if isinstance(m, GridDensity):
        return feature_moments(bank, m)
    if isinstance(m, ParticleMeasure):
        return feature_moments(bank, m)
    values = getattr(m, "values", None)
    grid = getattr(m, "grid", None)
    if values is not None and grid is not None:
        pts = grid.centers()
        return bank.features(pts).T @ (np.asarray(values) * grid.cell_volume)
    raise TypeError(f"mmd2 does not handle {type(m).__name__}")


def mmd2(a, b, bank: FeatureBank) -> float:
    """Squared MMD ``1/2 iint k d(a-b) d(a-b)`` for the bank's feature kernel.

    With ``k = (1/m) sum_j sigma_j sigma_j`` the double integral factors as
    ``1/(2m) sum_j (int sigma_j d(a-b))^2``, which is the exact double sum
    regrouped over features.
    """
    diff = _signed_moments(bank, a) - _signed_moments(bank, b)
    return float(0.5 * np.dot(diff, diff) / bank.m)


def mmd2_double_sum(a, b, bank: FeatureBank) -> float:
    """Reference ``1/2 sum_ij k(x_i, x_j) s_i s_j`` over the pooled signed atoms."""
    pa, ma = support_points(a)
    pb, mb = support_points(b)
    pts = np.vstack([pa, pb])
    s = np.concatenate([ma, -mb])
    phi = bank.features(pts)
    K = phi @ phi.T / bank.m
    return float(0.5 * s @ K @ s)


def expected_score(P: GridDensity, target: GridDensity, f) -> float:
    """``int f(P(x)) dP*(x)`` for a pointwise score ``f`` of the model density."""
    if not P.same_grid(target):
        raise ValueError("densities must share a grid")
    with np.errstate(divide="ignore"):
        vals = np.asarray(f(P.values), dtype=float)
    on = target.masses > 0
    return float(np.sum(target.masses[on] * vals[on]))
