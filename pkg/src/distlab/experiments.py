"""Named experiments: typed defaults, a runner, and pass/fail checks.

Every runner takes the resolved parameter dict and a seed and returns an
``ExperimentResult``. Defaults reproduce the reference configurations; the
CLI writes the trajectory, a summary, and a plot for each run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import collapse, interpolant, mmd_gan, potential
from .measures import GaussianMeasure, GridDensity, ParticleMeasure, sample
from .metrics import w2_1d
from .plot import PlotSpec
from .rfm import draw_bank
from .trajectory import TrajectoryLog


@dataclass
class ExperimentResult:
    log: TrajectoryLog
    summary: dict[str, Any]
    checks: dict[str, bool]
    plot: PlotSpec
    tables: dict[str, list[dict]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


@dataclass(frozen=True)
class Experiment:
    name: str
    defaults: dict[str, Any]
    run: Callable[[dict[str, Any], int], ExperimentResult]
    doc: str = ""


REGISTRY: dict[str, Experiment] = {}


def register(name: str, defaults: dict[str, Any], doc: str = ""):
    def deco(fn):
        REGISTRY[name] = Experiment(name, dict(defaults), fn, doc)
        return fn

    return deco


def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


# -- bias potential ------------------------------------------------------------

BP_DEFAULTS = dict(cells=256, m=2048, activation="relu", law="l1_sphere", target_norm=1.0, n_anchors=16)


@dataclass(frozen=True)
class BPSetup:
    base: GridDensity
    bank: Any
    target: GridDensity
    planted: Any
    lam_max: float


def bp_setup(p: dict, seed: int) -> BPSetup:
    base = GridDensity.uniform(1, int(p["cells"]))
    bank = draw_bank(1, int(p["m"]), p["activation"], p["law"], seed)
    V = potential.planted_potential(bank, float(p["target_norm"]), seed, int(p["n_anchors"]))
    target = potential.density_of(V, base)
    lam = potential.gram_lambda_max(bank, base)
    return BPSetup(base, bank, target, V, lam)


def rate_ratio(log: TrajectoryLog, norm: float, t_lo: float = 1.0, t_hi: float = 100.0) -> float:
    """Largest ``2 t KL / norm^2`` over logged ``t`` in ``[t_lo, t_hi]``."""
    t, k = log["t"], log["kl"]
    sel = (t >= t_lo) & (t <= t_hi)
    return float(np.max(2.0 * t[sel] * k[sel] / norm**2))


@register("bp_rate", {**BP_DEFAULTS, "T": 100.0, "dt": 0.0, "log_every": 1},
          "population training toward a planted potential")
def run_bp_rate(p, seed):
    s = bp_setup(p, seed)
    dt = float(p["dt"]) or 1.0 / s.lam_max
    log = potential.train_bp(s.target, s.base, s.bank, dt, float(p["T"]), int(p["log_every"]))
    norm = float(p["target_norm"])
    ratio = rate_ratio(log, norm, 1.0, float(p["T"]))
    summary = dict(dt=dt, lambda_max=s.lam_max, rate_ratio_max=ratio, kl_final=log.last()["kl"])
    return ExperimentResult(
        log, summary, {"rate_bound": ratio <= 1.10},
        PlotSpec("t", ["kl"], logx=True, logy=True, title="population KL"),
    )


@register("bp_memorize", {**BP_DEFAULTS, "n": 100, "T": 2000.0, "dt": 1.0, "log_every": 1},
          "empirical training: early minimum then memorization")
def run_bp_memorize(p, seed):
    s = bp_setup(p, seed)
    log, summ = potential.empirical_run(s.target, s.base, s.bank, int(p["n"]), seed, float(p["dt"]),
                                        float(p["T"]), int(p["log_every"]))
    checks = {
        "interior_min": summ.interior,
        "kl_ratio": summ.kl_final >= 2.0 * summ.kl_min,
        "norm_ratio": summ.norm_final >= 2.0 * summ.norm_at_min,
    }
    summary = {**summ.as_dict(), "norm_at_min": summ.norm_at_min, "norm_final": summ.norm_final}
    return ExperimentResult(log, summary, checks,
                            PlotSpec("t", ["kl"], logx=True, logy=True, title="empirical KL"))


def median_by_n(rows, ns, key):
    return [float(np.median([getattr(r, key) for r in rows if r.n == n])) for n in ns]


@register("bp_sweep", {**BP_DEFAULTS, "ns": "50,200,800", "seeds": 5, "T": 2000.0, "dt": 1.0, "log_every": 1},
          "early-stopped KL against sample size")
def run_bp_sweep(p, seed):
    s = bp_setup(p, seed)
    ns = _ints(p["ns"])
    rows = potential.early_stopping_sweep(s.target, s.base, s.bank, ns,
                                          [seed + 1 + i for i in range(int(p["seeds"]))],
                                          float(p["dt"]), float(p["T"]), int(p["log_every"]))
    med = median_by_n(rows, ns, "kl_min")
    slope = potential.loglog_slope(ns, med)
    log = TrajectoryLog.from_arrays(["n", "kl_min_median"], ns, med)
    table = [r.as_dict() for r in rows]
    checks = {"decreasing": bool(np.all(np.diff(med) < 0)), "slope": slope <= -0.15}
    return ExperimentResult(log, {"medians": med, "slope": slope}, checks,
                            PlotSpec("n", ["kl_min_median"], logx=True, logy=True, title="early-stopped KL"),
                            {"sweep": table})


# -- MMD GAN -------------------------------------------------------------------

MMD_DEFAULTS = dict(cells=64, m=2048, activation="relu", law="l1_sphere", amplitude=0.8, n_anchors=8)


def mmd_setup(p: dict, seed: int):
    bank = draw_bank(1, int(p["m"]), p["activation"], p["law"], seed)
    target = mmd_gan.smooth_target(bank, int(p["cells"]), float(p["amplitude"]), seed, int(p["n_anchors"]))
    lam = potential.gram_lambda_max(bank, GridDensity.uniform(1, int(p["cells"])))
    return bank, target, lam


def spectral_gap(bank, target, dt: float, times) -> float:
    """Largest sup-norm gap between Euler iterates and the eigen-solution."""
    P0 = mmd_gan.DensityIterate.from_grid(GridDensity.uniform(1, target.cells_per_axis))
    euler = mmd_gan.mmd_gan_flow(P0, target, bank, dt, max(times), times)
    exact = mmd_gan.spectral_solution(P0, target, bank, [e.t for e in euler])
    return max(float(np.max(np.abs(e.values - x.values))) for e, x in zip(euler, exact))


@register("mmd_spectral", {**MMD_DEFAULTS, "n": 100, "T": 100000.0, "dt": 0.0, "t_check": 1000.0,
                           "compare_dt": 1e-3, "compare_times": "1,10,100"},
          "density GAN flow: spectral check, population and empirical W2")
def run_mmd_spectral(p, seed):
    bank, target, lam = mmd_setup(p, seed)
    dt = float(p["dt"]) or 1.0 / lam
    gap = spectral_gap(bank, target, float(p["compare_dt"]), [float(v) for v in _ints(p["compare_times"])])
    tc = float(p["t_check"])
    times = np.unique(np.concatenate([mmd_gan.log_times_geometric(dt, float(p["T"])), [tc]]))
    log = mmd_gan.mmd_gan_experiment(target, int(p["n"]), bank, dt, float(p["T"]), seed, times)
    t, w = log["t"], log["w2"]
    w_check = float(w[np.argmin(np.abs(t - tc))])
    mm = log["mmd2"]
    summ = mmd_gan.summarize_empirical(log, int(p["n"]))
    checks = {
        "spectral_match": gap <= 1e-4,
        "population_w2": w_check < 0.05,
        "mmd_nonincreasing": bool(np.all(np.diff(mm) <= 1e-12)),
        "empirical_u_curve": summ.interior and summ.t_star < t[-1],
    }
    summary = dict(dt=dt, lambda_max=lam, spectral_gap=gap, w2_at_check=w_check,
                   t_star=summ.t_star, w2_empirical_min=summ.w2_min, w2_empirical_final=summ.w2_final)
    return ExperimentResult(log, summary, checks,
                            PlotSpec("t", ["w2", "w2_empirical"], logx=True, logy=True,
                                     title="W2 test error", labels=["population", "empirical"]))


@register("mmd_sweep", {**MMD_DEFAULTS, "ns": "50,200,800", "seeds": 10, "T": 100000.0, "dt": 0.0},
          "minimum empirical W2 against sample size")
def run_mmd_sweep(p, seed):
    bank, target, lam = mmd_setup(p, seed)
    dt = float(p["dt"]) or 1.0 / lam
    ns = _ints(p["ns"])
    times = mmd_gan.log_times_geometric(dt, float(p["T"]))
    rows = []
    table = []
    for n in ns:
        for i in range(int(p["seeds"])):
            log = mmd_gan.mmd_gan_experiment(target, n, bank, dt, float(p["T"]), seed + 1 + i, times)
            r = mmd_gan.summarize_empirical(log, n)
            rows.append(r)
            table.append(dict(n=n, t_star=r.t_star, w2_min=r.w2_min, w2_final=r.w2_final))
    med = median_by_n(rows, ns, "w2_min")
    slope = potential.loglog_slope(ns, med)
    log = TrajectoryLog.from_arrays(["n", "w2_min_median"], ns, med)
    return ExperimentResult(log, {"medians": med, "slope": slope}, {"slope": slope <= -0.1},
                            PlotSpec("n", ["w2_min_median"], logx=True, logy=True, title="early-stopped W2"),
                            {"sweep": table})


# -- interpolant and diffusion -------------------------------------------------

GAUSS_DEFAULTS = dict(mu=2.0, sigma=0.5)


def gauss_problem(p) -> interpolant.InterpolantProblem:
    return interpolant.InterpolantProblem(
        GaussianMeasure.standard(1), GaussianMeasure([float(p["mu"])], [float(p["sigma"]) ** 2])
    )


@register("interp_gauss", {**GAUSS_DEFAULTS, "n": 10000, "steps": 100},
          "transport with the exact Gaussian velocity")
def run_interp_gauss(p, seed):
    prob = gauss_problem(p)
    V = interpolant.gaussian_velocity(prob.base, prob.target)
    n = int(p["n"])
    x0 = sample(prob.base, n, seed).points
    log = TrajectoryLog(["tau", "mean", "std"])
    x = x0.copy()
    steps = int(p["steps"])
    log.append(0.0, float(x.mean()), float(x.std()))
    for i in range(steps):
        x = interpolant.rk4(V, x, i / steps, (i + 1) / steps, 1)
        log.append((i + 1) / steps, float(x.mean()), float(x.std()))
    ref = sample(prob.target, n, seed + 1)
    w = w2_1d(ParticleMeasure.uniform(x), ref)
    return ExperimentResult(log, {"w2": w, "mean": float(x.mean()), "std": float(x.std())}, {"w2": w <= 0.03},
                            PlotSpec("tau", ["mean", "std"], title="transported moments"))


@register("interp_train", {**GAUSS_DEFAULTS, "m": 512, "activation": "relu", "law": "l1_sphere", "batch": 256,
                           "dt": 4.0, "steps": 24000, "tail_fraction": 0.5, "n_eval": 10000, "rk_steps": 100,
                           "log_every": 200},
          "minibatch flow matching with a random-feature velocity")
def run_interp_train(p, seed):
    prob = gauss_problem(p)
    bank = draw_bank(2, int(p["m"]), p["activation"], p["law"], seed)
    dt = float(p["dt"])
    field_, log = interpolant.train_interpolant(prob, bank, int(p["batch"]), dt, dt * int(p["steps"]), seed,
                                                int(p["log_every"]), float(p["tail_fraction"]))
    x0 = sample(prob.base, int(p["n_eval"]), seed).points
    x1 = interpolant.flow_transport(field_, x0, int(p["rk_steps"]))
    mean, std = float(x1.mean()), float(x1.std())
    expo = interpolant.fit_growth_exponent(log["t"], log["param_norm"])
    mu, sig = float(p["mu"]), float(p["sigma"])
    checks = {"mean": abs(mean - mu) <= 0.05, "std": abs(std - sig) <= 0.05, "growth": expo <= 0.7}
    log.extras["field"] = field_
    return ExperimentResult(log, {"mean": mean, "std": std, "growth_exponent": expo}, checks,
                            PlotSpec("t", ["param_norm"], logx=True, logy=True, title="parameter norm"))


@register("diffusion_gauss", {**GAUSS_DEFAULTS, "beta": 2.0, "T": 5.0, "x0": 3.0, "tau": 1.0,
                              "n_forward": 100000, "forward_dt": 1e-3, "n": 10000, "ode_steps": 500,
                              "sde_dt": 1e-3},
          "forward noising and reverse generation with the exact score")
def run_diffusion_gauss(p, seed):
    sched = interpolant.DiffusionSchedule(float(p["beta"]), float(p["T"]))
    x0, tau = float(p["x0"]), float(p["tau"])
    law = interpolant.diffusion_forward_law(sched, [x0], tau)
    paths = interpolant.simulate_forward(sched, [x0], tau, int(p["n_forward"]), float(p["forward_dt"]), seed)
    fm, fv = float(paths.mean()), float(paths.var())
    target = GaussianMeasure([float(p["mu"])], [float(p["sigma"]) ** 2])
    score = interpolant.gaussian_score(sched, target)
    n = int(p["n"])
    ode = interpolant.reverse_generate(sched, score, "ode", n, int(p["ode_steps"]), seed)
    sde = interpolant.reverse_generate(sched, score, "sde", n, int(round(sched.T / float(p["sde_dt"]))), seed)
    om, ov = float(ode.mean()[0]), float(ode.variance()[0])
    w = w2_1d(ode, sde)
    mu, s2 = float(p["mu"]), float(p["sigma"]) ** 2
    checks = {
        "forward_mean": abs(fm - law.mean[0]) <= 0.01 * abs(law.mean[0]),
        "forward_var": abs(fv - law.covariance[0]) <= 0.02 * law.covariance[0],
        "ode_mean": abs(om - mu) <= 0.05,
        "ode_var": abs(ov - s2) <= 0.05 * s2,
        "sde_vs_ode": w <= 0.1,
    }
    ts = np.linspace(0.0, sched.T, 51)
    mean_curve = [float(np.exp(-sched.B(t) / 2) * mu) for t in ts]
    log = TrajectoryLog.from_arrays(["tau", "marginal_mean"], ts, mean_curve)
    summary = dict(forward_mean=fm, forward_var=fv, law_mean=float(law.mean[0]), law_var=float(law.covariance[0]),
                   ode_mean=om, ode_var=ov, sde_mean=float(sde.mean()[0]), sde_var=float(sde.variance()[0]),
                   w2_sde_ode=w)
    return ExperimentResult(log, summary, checks, PlotSpec("tau", ["marginal_mean"], title="diffused mean"))


# -- toy games and landscape ---------------------------------------------------


@register("collapse_case1", {"a0": 2.5, "c": 0.1, "horizon": 0.0, "step": 1e-3, "samples": 400, "sweep": False},
          "closed-form trajectory of the damped game and collapse detection")
def run_collapse_case1(p, seed):
    a0, c = float(p["a0"]), float(p["c"])
    horizon = float(p["horizon"]) or collapse.case1_half_period(c)
    out = collapse.detect_collapse_case1(a0, c, horizon, float(p["step"]))
    ts = np.linspace(0.0, horizon, int(p["samples"]) + 1)
    a, b = collapse.case1_closed_form(a0, c, ts)
    log = TrajectoryLog.from_arrays(["t", "a", "b"], ts, a, b)
    summary = dict(outcome=out.label, t_collapse=out.t_collapse, min_a=out.min_a,
                   threshold=collapse.case1_threshold(c))
    expected = a0 >= collapse.case1_threshold(c) and horizon >= collapse.case1_half_period(c)
    checks = {"threshold_consistent": out.collapsed == expected} if horizon >= collapse.case1_half_period(c) else {}
    tables = {}
    if p["sweep"]:
        sw = []
        for cc in np.linspace(0.0, 0.9, 10):
            for aa in np.linspace(0.5, 6.0, 12):
                o = collapse.detect_collapse_case1(aa, cc, collapse.case1_half_period(cc), float(p["step"]))
                sw.append(dict(a0=float(aa), c=float(cc), gamma="", outcome=o.label,
                               t_collapse="" if o.t_collapse is None else o.t_collapse))
        tables["sweep"] = sw
    return ExperimentResult(log, summary, checks, PlotSpec("t", ["a", "b"], title="first game"), tables)


@register("collapse_case2", {"a0": 2.5, "b0": 0.0, "c": -1.0, "gamma": 0.1, "max_steps": 1000000,
                             "log_every": 100},
          "discrete second game with the energy function (c < 0 means gamma/144)")
def run_collapse_case2(p, seed):
    gamma = float(p["gamma"])
    c = float(p["c"]) if float(p["c"]) >= 0 else gamma / 144.0
    log = collapse.case2_discrete(float(p["a0"]), float(p["b0"]), c, gamma, int(p["max_steps"]),
                                  int(p["log_every"]))
    H = log["H"]
    collapsed = bool(log.extras["collapsed"])
    finite = np.isfinite(H)
    window_ok = bool(np.all(np.diff(H[finite]) >= 0))
    fb = log.extras["first_below"]
    last = log.last()
    summary = dict(c=c, collapsed=collapsed, steps=log.extras["steps"], first_below=fb,
                   a_final=last["a"], b_final=last["b"])
    checks = {}
    if c <= min(1.0 / 17.0, gamma / 144.0):
        checks = {"energy_nondecreasing": window_ok, "underflow": fb is not None}
    return ExperimentResult(log, summary, checks, PlotSpec("step", ["a", "b"], title="second game"))


@register("landscape", {"init": "atom", "atom_value": 0.3, "nodes": 4096, "cells": 64, "dt": 0.5, "T": 12.0},
          "closed-form W2 landscape flow toward a uniform target")
def run_landscape(p, seed):
    target = GridDensity.uniform(1, int(p["cells"]))
    N = int(p["nodes"])
    z = collapse.base_nodes(N)
    init = p["init"]
    if init == "atom":
        G0 = np.full(N, float(p["atom_value"]))
    elif init == "linear":
        G0 = 2.0 * z
    elif init == "optimal":
        G0 = collapse.monotone_map(target, N)
    else:
        raise ValueError(f"unknown init {init!r}")
    state = collapse.Transport1DState(G0, target)
    kind0 = collapse.classify_stationary(state)
    log = collapse.landscape_flow(state, float(p["dt"]), float(p["T"]))
    kind_final = collapse.classify_stationary(collapse.landscape_limit(state))
    w = log["w2"]
    checks = {"m_invariant": float(log["m_drift"].max()) <= 1e-6}
    if init == "atom":
        checks["limit"] = abs(w[-1] - 1 / math.sqrt(12)) <= 1e-3
        checks["saddle"] = kind_final == "generalized_saddle"
    elif init == "linear":
        checks["closed_form"] = bool(np.all(np.abs(w - np.exp(-log["t"]) / math.sqrt(3)) <= 1e-3))
        checks["not_stationary"] = kind0 == "not_stationary"
    else:
        checks["global_min"] = kind0 == "global_min"
    summary = dict(initial=kind0, limit=kind_final, w2_final=float(w[-1]))
    return ExperimentResult(log, summary, checks, PlotSpec("t", ["w2"], logy=True, title="W2 along the flow"))
