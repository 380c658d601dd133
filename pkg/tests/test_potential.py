import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distlab.experiments import BP_DEFAULTS, bp_setup
from distlab.measures import GridDensity, ParticleMeasure, normalize, sample
from distlab.metrics import kl
from distlab.potential import (
    BoltzmannState,
    Regularization,
    bp_coeff_gradient,
    bp_grad_field,
    bp_loss,
    density_from_values,
    density_of,
    gram_lambda_max,
    ivanov_project,
    loglog_slope,
    loss_from_values,
    planted_potential,
    summarize_memorization,
    tikhonov_prox,
    train_bp,
    train_bp_regularized,
)
from distlab.rfm import FeatureBank, RfmFunction, draw_bank, parameter_norm
from distlab.trajectory import TrajectoryLog


@pytest.fixture(scope="module")
def small():
    base = GridDensity.uniform(1, 32)
    bank = draw_bank(1, 64, "relu", "l1_sphere", 3)
    V = planted_potential(bank, 1.0, 3)
    return base, bank, V, density_of(V, base)


def test_density_linear_potential_two_cells():
    # V(x) = x on centers 1/4, 3/4: masses proportional to e^{-1/4}, e^{-3/4}
    bank = FeatureBank(np.ones((1, 1)), np.zeros(1), "relu")
    V = RfmFunction(bank, np.array([1.0]))
    p = density_of(V, GridDensity.uniform(1, 2))
    w = np.exp([-0.25, -0.75])
    assert np.allclose(p.values, 2 * w / w.sum(), rtol=1e-14)


def test_zero_potential_gives_base():
    base = normalize(GridDensity(1, 5, [1, 2, 3, 2, 1]))
    p = density_from_values(np.zeros(5), base)
    assert np.allclose(p.values, base.values, rtol=1e-14)


def test_boltzmann_state_caches_density(small):
    base, _, V, target = small
    assert np.array_equal(BoltzmannState(V, base).density.values, target.values)


@given(st.floats(-30, 30), st.integers(0, 2**31))
def test_shift_invariance(c, seed):
    base = GridDensity.uniform(1, 12)
    v = np.random.default_rng(seed).normal(size=12)
    a, b = density_from_values(v, base), density_from_values(v + c, base)
    assert np.allclose(a.values, b.values, rtol=1e-10)


def test_extreme_potential_is_stable():
    base = GridDensity.uniform(1, 4)
    p = density_from_values(np.array([1e4, 0.0, 1e4, 1e4]), base)
    assert np.all(np.isfinite(p.values)) and abs(p.total_mass() - 1) < 1e-12


def test_loss_gap_equals_kl(small):
    base, bank, Vstar, target = small
    V = planted_potential(bank, 0.7, 11)
    gap = bp_loss(V, target, base) - bp_loss(Vstar, target, base)
    assert gap == pytest.approx(kl(target, density_of(V, base)), rel=1e-9, abs=1e-13)


def test_loss_of_zero_potential_is_zero(small):
    base, bank, _, target = small
    assert bp_loss(RfmFunction.zeros(bank), target, base) == pytest.approx(0.0, abs=1e-14)
    assert loss_from_values(np.zeros(32), 0.0, base) == pytest.approx(0.0, abs=1e-14)


def test_coeff_gradient_matches_finite_differences(small):
    base, bank, _, target = small
    a = np.random.default_rng(0).normal(size=bank.m) * 0.5
    V = RfmFunction(bank, a)
    g = bp_coeff_gradient(V, target, base)[:, 0]
    eps = 1e-5
    idx = [0, 7, 21, 40, 63]
    for j in idx:
        e = np.zeros(bank.m)
        e[j] = eps
        fd = (bp_loss(RfmFunction(bank, a + e), target, base) - bp_loss(RfmFunction(bank, a - e), target, base)) / (2 * eps)
        # L^2(rho) gradient is m times the Euclidean one
        assert g[j] == pytest.approx(bank.m * fd, rel=1e-5, abs=1e-9)


def test_coeff_gradient_particles_matches_grid_for_atoms_at_centers():
    base = GridDensity.uniform(1, 4)
    bank = draw_bank(1, 16, "sigmoid", "gaussian", 0)
    V = RfmFunction(bank, np.random.default_rng(1).normal(size=16))
    grid_t = normalize(GridDensity(1, 4, [1, 2, 3, 4]))
    part_t = ParticleMeasure(base.centers(), grid_t.masses)
    assert np.allclose(bp_coeff_gradient(V, grid_t, base), bp_coeff_gradient(V, part_t, base), rtol=1e-12)


def test_grad_field_integrates_to_zero_and_vanishes_at_optimum(small):
    base, bank, Vstar, target = small
    g = bp_grad_field(RfmFunction.zeros(bank), target, base)
    assert abs(g.integral()) < 1e-13
    assert np.max(np.abs(bp_grad_field(Vstar, target, base).values)) < 1e-12
    assert g(np.array([[0.01]]))[0] == g.values[0]


def test_grad_field_rejects_particles(small):
    base, bank, _, target = small
    with pytest.raises(TypeError):
        bp_grad_field(RfmFunction.zeros(bank), sample(target, 5, 0), base)


def test_planted_potential_has_requested_norm():
    bank = draw_bank(1, 200, seed=4)
    assert parameter_norm(planted_potential(bank, 2.5, 4)) == pytest.approx(2.5, rel=1e-12)


def test_gram_lambda_max_paths_agree():
    base = GridDensity.uniform(1, 600)
    bank = draw_bank(1, 700, "relu", "l1_sphere", 0)
    pts = base.centers()
    phi = bank.features(pts) * np.sqrt(base.masses)[:, None]
    dense = np.linalg.eigvalsh(phi @ phi.T / bank.m)[-1]
    assert gram_lambda_max(bank, base) == pytest.approx(dense, rel=1e-8)


def test_population_loss_monotone(small):
    base, bank, _, target = small
    dt = 1.0 / gram_lambda_max(bank, base)
    log = train_bp(target, base, bank, dt, 50 * dt)
    assert np.all(np.diff(log["loss"]) <= 1e-14)
    assert np.all(np.diff(log["kl"]) <= 1e-14)


def test_target_equal_base_stays_at_zero(small):
    base, bank, _, _ = small
    log = train_bp(base, base, bank, 1.0, 20.0)
    assert np.max(np.abs(log["kl"])) < 1e-14
    assert np.max(log["param_norm"]) < 1e-14


def test_unstable_step_rejected(small):
    base, bank, _, target = small
    lam = gram_lambda_max(bank, base)
    with pytest.raises(ValueError, match="unstable"):
        train_bp(target, base, bank, 2.0 / lam, 1.0)


def test_ivanov_projection():
    a = np.array([3.0, 4.0])
    assert parameter_norm(ivanov_project(a, 1.0)) == pytest.approx(1.0, rel=1e-14)
    assert ivanov_project(a, 10.0) is a


@given(st.integers(0, 2**31), st.floats(1e-3, 5))
def test_tikhonov_prox_shrinks_norm_by_step(seed, step):
    a = np.random.default_rng(seed).normal(size=10)
    out = tikhonov_prox(a, step)
    n0 = parameter_norm(a)
    assert parameter_norm(out) == pytest.approx(max(n0 - step, 0.0), abs=1e-12)


def test_regularization_validation():
    with pytest.raises(ValueError):
        Regularization("lasso", 1.0)
    with pytest.raises(ValueError):
        Regularization("ivanov", 0.0)


def test_huge_tikhonov_keeps_zero_potential(small):
    base, bank, _, target = small
    pts = sample(target, 50, 1)
    log = train_bp_regularized(pts, base, bank, Regularization("tikhonov", 1e6), 1.0, 30.0, reference=target)
    assert np.max(log["param_norm"]) == 0.0
    assert log["kl"][-1] == pytest.approx(kl(target, base), rel=1e-12)


def test_ivanov_norm_bound_holds(small):
    base, bank, _, target = small
    pts = sample(target, 40, 2)
    log = train_bp_regularized(pts, base, bank, Regularization("ivanov", 0.3), 1.0, 200.0, reference=target)
    assert np.max(log["param_norm"]) <= 0.3 + 1e-12


def test_ivanov_beats_unregularized_memorization():
    s = bp_setup(dict(BP_DEFAULTS), 0)
    pts = sample(s.target, 100, 0)
    free = train_bp(pts, s.base, s.bank, 1.0, 2000.0, 50, reference=s.target)
    reg = train_bp_regularized(pts, s.base, s.bank, Regularization("ivanov", 1.0), 1.0, 2000.0, 50,
                               reference=s.target)
    assert reg["kl"][-1] < free["kl"][-1]


def test_summarize_memorization_hand_log():
    log = TrajectoryLog.from_arrays(["t", "loss", "kl", "param_norm"],
                                    [0, 1, 2, 3], [0, 0, 0, 0], [0.5, 0.2, 0.3, 0.6], [0, 1, 2, 4])
    s = summarize_memorization(log, 10)
    assert (s.t_star, s.kl_min, s.kl_final, s.norm_at_min, s.norm_final) == (1.0, 0.2, 0.6, 1.0, 4.0)
    assert s.interior


def test_loglog_slope_exact_power():
    ns = np.array([10, 100, 1000])
    assert loglog_slope(ns, 3.0 * ns**-0.5) == pytest.approx(-0.5, abs=1e-12)
    assert math.isfinite(loglog_slope([1, 2], [1, 1]))
