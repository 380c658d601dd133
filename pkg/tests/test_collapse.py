import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distlab.collapse import (
    ToyGameState,
    Transport1DState,
    base_nodes,
    case1_closed_form,
    case1_half_period,
    case1_rhs,
    case1_threshold,
    case2_discrete,
    case2_modified_ode,
    case2_rk4,
    case2_step,
    classify_stationary,
    conditional_mean_map,
    detect_collapse_case1,
    energy,
    energy_rate,
    energy_rate_chain,
    landscape_flow,
    landscape_limit,
    landscape_trajectory,
    monotone_map,
    rk4_case1,
)
from distlab.measures import GridDensity, normalize

# -- first game ---------------------------------------------------------------


@given(st.floats(0.1, 5), st.floats(0, 0.95))
def test_closed_form_initial_condition(a0, c):
    a, b = case1_closed_form(a0, c, 0.0)
    assert float(a) == pytest.approx(a0, rel=1e-14) and float(b) == 0.0


@given(st.floats(0.1, 5), st.floats(0, 0.95), st.floats(0, 20))
def test_closed_form_solves_ode_by_complex_step(a0, c, t):
    h = 1e-30
    a, b = case1_closed_form(a0, c, complex(t, h))
    da, db = a.imag / h, b.imag / h
    fa, fb = case1_rhs(a.real, b.real, c)
    assert da == pytest.approx(fa, abs=1e-12)
    assert db == pytest.approx(fb, abs=1e-12)


def test_closed_form_matches_rk4():
    ts, A, B = rk4_case1(2.5, 0.0, 0.3, 12.0, 2400)
    a, b = case1_closed_form(2.5, 0.3, ts)
    assert np.max(np.abs(A - a)) < 1e-11 and np.max(np.abs(B - b)) < 1e-11


def test_undamped_half_period_value():
    # c = 0: a(t) = 1 + (a0 - 1) cos(t/2), so a(2 pi) = 2 - a0
    a, _ = case1_closed_form(1.7, 0.0, 2 * math.pi)
    assert float(a) == pytest.approx(0.3, abs=1e-14)
    assert case1_half_period(0.0) == pytest.approx(2 * math.pi)


def test_verbatim_amplitude_differs():
    _, b = case1_closed_form(2.5, 0.1, 1.0)
    _, bv = case1_closed_form(2.5, 0.1, 1.0, verbatim_b=True)
    assert float(bv) / float(b) == pytest.approx(2.5 / 1.5, rel=1e-14)


@pytest.mark.parametrize("c", [0.0, 0.1, 0.5, 0.9])
def test_threshold_separates_outcomes(c):
    th = case1_threshold(c)
    T = case1_half_period(c)
    assert detect_collapse_case1(th * 1.01, c, T).collapsed
    assert not detect_collapse_case1(th * 0.99, c, T).collapsed
    a_min, _ = case1_closed_form(th, c, T)
    assert float(a_min) == pytest.approx(0.0, abs=1e-12)


def test_threshold_hand_values():
    assert case1_threshold(0.0) == 2.0
    assert case1_threshold(0.6) == pytest.approx(1 + math.exp(0.6 * math.pi / 0.8), rel=1e-15)


def test_survival_examples():
    out = detect_collapse_case1(2.5, 0.9, 50.0)
    assert not out.collapsed and out.label == "survived" and out.t_collapse is None
    hit = detect_collapse_case1(2.5, 0.1, case1_half_period(0.1))
    assert hit.collapsed and hit.label == "collapsed" and 0 < hit.t_collapse < case1_half_period(0.1)


def test_case1_validation():
    with pytest.raises(ValueError):
        case1_closed_form(2.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        detect_collapse_case1(-1.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        ToyGameState(1.0, 0.0, c=-0.1)
    with pytest.raises(ValueError):
        ToyGameState(1.0, 0.0, phi="cube")


# -- second game ---------------------------------------------------------------


def test_energy_minimum():
    assert float(energy(1.0, 0.0)) == 0.0
    assert case2_step(1.0, 0.0, 0.3, 0.1) == (1.0, 0.0)
    a = np.linspace(0.2, 3, 50)
    assert np.all(energy(a, 0.0) >= 0)


@given(st.floats(0.1, 3), st.floats(-2, 2), st.floats(0, 1), st.floats(0, 0.5))
def test_energy_rate_matches_chain_rule(a, b, c, g):
    assert float(energy_rate(a, b, c, g)) == pytest.approx(float(energy_rate_chain(a, b, c, g)), rel=1e-12, abs=1e-14)


@given(st.floats(0.1, 3), st.floats(-2, 2), st.floats(1e-3, 0.5))
def test_energy_grows_without_damping(a, b, g):
    # c = 0: dH/dt >= gamma (a^2 - 1)^2 / 72 >= 0
    assert float(energy_rate(a, b, 0.0, g)) >= g * (a * a - 1) ** 2 / 72 - 1e-15


def test_modified_ode_zero_gamma_is_continuous_game():
    da, db = case2_modified_ode(1.5, 0.4, 0.2, 0.0)
    assert float(da) == pytest.approx(-1.5 * 0.4 / 3)
    assert float(db) == pytest.approx((1.5**2 - 1) / 6 - 0.2 * 0.4)


def test_modified_ode_local_error_third_order():
    # one map step vs the modified flow over time gamma: error O(gamma^3)
    a0, b0, c = 1.4, 0.3, 0.2
    gs = np.array([0.08, 0.04, 0.02, 0.01])
    errs = []
    for g in gs:
        a1, b1 = case2_step(a0, b0, c, g)
        ra, rb = case2_rk4(a0, b0, c, g, g, steps=16)
        errs.append(math.hypot(a1 - ra, b1 - rb))
    order = np.polyfit(np.log(gs), np.log(errs), 1)[0]
    assert order == pytest.approx(3.0, abs=0.15)


def test_discrete_game_collapses_and_logs():
    log = case2_discrete(1.0, 0.5, 0.0, 0.5, 20_000, log_every=10)
    assert log.columns == ["step", "a", "b", "H"]
    assert log.extras["collapsed"] and log.extras["first_below"] is not None
    assert log.extras["first_below"] <= log.extras["steps"]
    with pytest.raises(ValueError):
        case2_discrete(0.0, 0.0, 0.0, 0.1, 10)


def test_discrete_game_damped_stays_near_optimum():
    log = case2_discrete(1.1, 0.0, 1.0, 0.05, 5000, log_every=100)
    assert not log.extras["collapsed"]
    assert log["H"][-1] < log["H"][0]


# -- landscape ---------------------------------------------------------------

UNIFORM = GridDensity.uniform(1, 8)


def test_identity_is_global_min_for_uniform():
    z = base_nodes(512)
    assert np.allclose(conditional_mean_map(z, UNIFORM), z, atol=1e-14)
    assert classify_stationary(Transport1DState(z, UNIFORM)) == "global_min"


def test_atom_is_saddle_at_target_mean():
    target = normalize(GridDensity(1, 4, [1, 2, 3, 4]))
    mean = float(np.sum(target.masses * target.centers()[:, 0]))
    G = np.full(256, 0.1)
    assert np.allclose(conditional_mean_map(G, target), mean, atol=1e-14)
    assert classify_stationary(Transport1DState(np.full(256, mean), target)) == "generalized_saddle"
    assert classify_stationary(Transport1DState(G, target)) == "not_stationary"


def test_monotone_map_block_means():
    # uniform target on [0,1]: mean of block k is (k + 1/2)/N
    assert np.allclose(monotone_map(UNIFORM, 16), base_nodes(16), atol=1e-15)
    two = GridDensity(1, 2, [2.0, 0.0])  # uniform on [0, 1/2)
    assert np.allclose(monotone_map(two, 4), np.array([1, 3, 5, 7]) / 16, atol=1e-15)


@given(st.integers(0, 2**31))
def test_conditional_mean_preserves_order(seed):
    r = np.random.default_rng(seed)
    G = r.random(200)
    G[:50] = G[0]  # include an atom
    target = normalize(GridDensity(1, 10, r.random(10) + 0.1))
    m = conditional_mean_map(G, target)
    order = np.argsort(G, kind="stable")
    assert np.all(np.diff(m[order]) >= -1e-12)
    assert float(m.mean()) == pytest.approx(float(np.sum(target.masses * target.centers()[:, 0])), abs=1e-12)


def test_trajectory_endpoints_and_invariance():
    target = normalize(GridDensity(1, 8, np.arange(1.0, 9.0)))
    G0 = 0.5 * base_nodes(1024)
    s = Transport1DState(G0, target)
    assert np.array_equal(landscape_trajectory(s, 0.0), s.G)
    log = landscape_flow(s, 0.5, 6.0)
    assert np.max(log["m_drift"]) < 1e-12
    assert np.all(np.diff(log["w2"]) <= 1e-12)
    lim = landscape_limit(s)
    assert classify_stationary(lim) == "global_min"
    assert np.allclose(lim.G, monotone_map(target, 1024), atol=1e-12)


def test_state_validation():
    with pytest.raises(ValueError):
        Transport1DState(np.array([np.inf]), UNIFORM)
    with pytest.raises(ValueError):
        Transport1DState(np.zeros(4), GridDensity.uniform(2, 2))
