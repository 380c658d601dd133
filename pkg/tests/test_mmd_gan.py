import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distlab.measures import GridDensity, ParticleMeasure, normalize, sample
from distlab.metrics import mmd2
from distlab.mmd_gan import (
    DensityIterate,
    log_times_geometric,
    mmd_gan_experiment,
    mmd_gan_flow,
    operator_lambda_max,
    project_simplex,
    smooth_target,
    spectral_solution,
)
from distlab.rfm import draw_bank, gram_spectrum


@pytest.fixture(scope="module")
def setup():
    bank = draw_bank(1, 200, "relu", "l1_sphere", 1)
    target = smooth_target(bank, 32, seed=1)
    P0 = DensityIterate.from_grid(GridDensity.uniform(1, 32))
    return bank, target, P0, operator_lambda_max(bank, target)


def _l2(a, b):
    return float(np.sqrt(np.sum((a.values - b.values) ** 2) * a.cell_volume))


def test_smooth_target_is_positive_density(setup):
    _, target, _, _ = setup
    assert target.total_mass() == pytest.approx(1.0, abs=1e-12)
    assert target.values.min() > 0
    assert target.values.max() / target.values.min() == pytest.approx(1.8 / 0.2, rel=0.25)


def test_target_is_fixed_point(setup):
    bank, target, _, lam = setup
    P = DensityIterate.from_grid(target)
    out = mmd_gan_flow(P, target, bank, 1.0 / lam, 50.0 / lam, log_times=[50.0 / lam])
    assert np.allclose(out[-1].values, target.values, atol=1e-14)


def test_euler_matches_spectral_solution(setup):
    bank, target, P0, lam = setup
    dt = 0.05 / lam
    times = [10 / lam, 100 / lam]
    num = mmd_gan_flow(P0, target, bank, dt, times[-1], log_times=times)
    ex = spectral_solution(P0, target, bank, times)
    for a, b in zip(num, ex):
        assert a.t == pytest.approx(b.t)
        # Euler error is O(dt) relative to the initial gap
        assert _l2(a, b) <= 0.05 * _l2(P0, DensityIterate.from_grid(target))


def test_spectral_at_zero_is_initial(setup):
    bank, target, P0, _ = setup
    assert np.allclose(spectral_solution(P0, target, bank, 0.0)[0].values, P0.values, atol=1e-12)


def test_l2_distance_contracts_at_rate_lambda_min(setup):
    bank, target, P0, _ = setup
    lam, _ = gram_spectrum(bank, GridDensity.uniform(1, 32))
    lmin = max(float(lam[0]), 0.0)
    d0 = _l2(P0, DensityIterate.from_grid(target))
    for it in spectral_solution(P0, target, bank, [1.0, 10.0, 100.0, 1000.0]):
        assert _l2(it, DensityIterate.from_grid(target)) <= np.exp(-lmin * it.t) * d0 + 1e-12


def test_mmd_nonincreasing_along_flow(setup):
    bank, target, P0, lam = setup
    its = mmd_gan_flow(P0, target, bank, 0.5 / lam, 400 / lam, log_times=np.linspace(0, 400 / lam, 21))
    vals = []
    x = target.centers()
    k = bank.features(x) @ bank.features(x).T / bank.m
    for it in its:
        # squared MMD of the signed iterate, by quadrature
        d = it.values - target.values
        vals.append(0.5 * float(d @ k @ d) * target.cell_volume**2)
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))
    assert mmd2(project_simplex(its[-1]), target, bank) <= mmd2(GridDensity.uniform(1, 32), target, bank)


def test_unstable_step_rejected(setup):
    bank, target, P0, lam = setup
    with pytest.raises(ValueError, match="unstable"):
        mmd_gan_flow(P0, target, bank, 2.5 / lam, 10 / lam)


def test_particle_target_drives_flow(setup):
    bank, target, P0, lam = setup
    pts = sample(target, 50, 0)
    out = mmd_gan_flow(P0, pts, bank, 1.0 / lam, 100 / lam, log_times=[100 / lam])
    grid_drive = mmd_gan_flow(P0, target, bank, 1.0 / lam, 100 / lam, log_times=[100 / lam])
    assert out[-1].values.shape == (32,)
    assert not np.allclose(out[-1].values, grid_drive[-1].values)
    # the particle drive equals a grid drive when atoms sit at cell centers
    centers = ParticleMeasure(target.centers(), target.masses)
    same = mmd_gan_flow(P0, centers, bank, 1.0 / lam, 100 / lam, log_times=[100 / lam])
    assert np.allclose(same[-1].values, grid_drive[-1].values, atol=1e-12)


def test_projection_hand_value():
    # two cells of volume 1/2, values (3, 1): theta = 1, projection (2, 0)
    p = project_simplex(DensityIterate(1, 2, [3.0, 1.0]))
    assert np.allclose(p.values, [2.0, 0.0], atol=1e-15)


def test_projection_keeps_valid_density():
    g = normalize(GridDensity(1, 6, [1, 2, 3, 4, 5, 6]))
    assert np.allclose(project_simplex(DensityIterate.from_grid(g)).values, g.values, atol=1e-13)


@given(st.integers(0, 2**31), st.integers(2, 30))
def test_projection_is_density_and_nonexpansive(seed, n):
    r = np.random.default_rng(seed)
    a = DensityIterate(1, n, r.normal(size=n) * 3)
    b = DensityIterate(1, n, r.normal(size=n) * 3)
    pa, pb = project_simplex(a), project_simplex(b)
    assert pa.total_mass() == pytest.approx(1.0, abs=1e-10)
    assert pa.values.min() >= 0
    assert _l2(pa, pb) <= _l2(a, b) + 1e-10


def test_iterate_validation():
    with pytest.raises(ValueError):
        DensityIterate(1, 3, [1.0, 2.0])
    with pytest.raises(ValueError):
        DensityIterate(1, 2, [np.nan, 1.0])


def test_log_times_geometric():
    t = log_times_geometric(0.1, 1000.0, 5)
    assert t[0] == 0.0 and t[1] == pytest.approx(0.1) and t[-1] == pytest.approx(1000.0)
    assert np.allclose(np.diff(np.log(t[1:])), np.log(10))


def test_experiment_columns_and_particle_support(setup):
    bank, target, _, lam = setup
    log = mmd_gan_experiment(target, 40, bank, 1.0 / lam, 200 / lam, 0, log_times=[0, 100 / lam, 200 / lam])
    assert log.columns == ["t", "mmd2", "w2", "w2_empirical"]
    assert log["mmd2"][-1] < log["mmd2"][0]
    assert log["w2"][-1] < log["w2"][0]

