import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from impulse_delay.errors import ConfigurationError
from impulse_delay.models import forex
from impulse_delay.simulate import SimConfig, mc_delayed_cost
from impulse_delay.threshold import _kit, optimize_a


def test_expected_reward_at_origin():
    assert float(forex.g(0.0, 0.2)) == pytest.approx(-25.0, rel=1e-15)


@given(st.floats(0.01, 5.0))
def test_fundamental_pair_product_is_one(alpha):
    p = forex.pair(alpha)
    assert float(p.psi(1.0) * p.phi(1.0)) == pytest.approx(1.0, rel=1e-14)


@given(st.floats(-20, 40))
def test_delayed_cost_without_delay_on_diagonal(a):
    p = forex.ForexParams(150, 50, 0.2, 0.0)
    assert float(forex.delayed_cost(a, a, p)) == pytest.approx(-150.0, rel=1e-12)


@given(m=st.floats(-5, 5), var=st.floats(0.01, 4))
def test_mean_abs_normal_against_quadrature(m, var):
    sd = math.sqrt(var)
    dens = lambda y: abs(y) * math.exp(-((y - m) ** 2) / (2 * var)) / (sd * math.sqrt(2 * math.pi))
    ref = sum(integrate.quad(dens, lo, hi, epsabs=1e-13, epsrel=1e-12)[0]
              for lo, hi in ((m - 12 * sd, 0.0), (0.0, m + 12 * sd)) if hi > lo)
    assert float(forex.mean_abs_normal(m, var)) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_delayed_cost_derivative_matches_difference():
    p = forex.ForexParams()
    xs = np.array([-3.0, 4.9, 5.0, 5.1, 12.0])
    h = 1e-6
    fd = (forex.delayed_cost(xs + h, 5.0, p) - forex.delayed_cost(xs - h, 5.0, p)) / (2 * h)
    np.testing.assert_allclose(forex.delayed_cost_dx(xs, 5.0, p), fd, rtol=1e-6, atol=1e-6)


def test_printed_variant_differs_near_target():
    p = forex.ForexParams()
    gap = forex.delayed_cost_printed(5.0, 5.0, p) - forex.delayed_cost(5.0, 5.0, p)
    assert abs(gap) > 10
    # far from the target both reduce to the same affine-in-|x-a| form
    far = forex.delayed_cost_printed(25.0, 5.0, p) - forex.delayed_cost(25.0, 5.0, p)
    assert abs(far) < 1e-8


@pytest.mark.parametrize("x, a", [(12.0, 5.0), (5.0, 5.0), (0.0, 5.0), (8.0, 3.0)])
def test_first_principles_delayed_cost_matches_mc(fx_problem, x, a):
    model, cost = fx_problem[1.0]
    est = mc_delayed_cost(model, cost, x, a, SimConfig(n_paths=40_000, seed=11))
    analytic = float(_kit(model, cost).r(x, a))
    assert abs(est.z_score(analytic)) < 3


def test_printed_variant_rejected_by_mc(fx_problem):
    model, cost = fx_problem[1.0]
    est = mc_delayed_cost(model, cost, 5.0, 5.0, SimConfig(n_paths=40_000, seed=12))
    printed = float(forex.delayed_cost_printed(5.0, 5.0, forex.ForexParams()))
    assert abs(est.z_score(printed)) > 10


def test_cost_value_flips_sign(fx_solutions):
    s = fx_solutions[1.0]
    xs = np.linspace(-5, 20, 11)
    np.testing.assert_array_equal(forex.cost_value(s, xs), -s.v(xs))


def test_delay_cost_majorizes_no_delay_cost(fx_solutions):
    xs = np.linspace(-30, 60, 2001)
    diff = forex.cost_value(fx_solutions[1.0], xs) - forex.cost_value(fx_solutions[0.0], xs)
    assert np.all(diff >= 0)


def test_cost_continuous_and_smooth_at_trigger(fx_solutions):
    s = fx_solutions[1.0]
    b = s.b_star
    assert b == pytest.approx(12.1756, rel=1e-3)
    h = 1e-5
    left = float(forex.cost_value(s, b - 1e-10))
    right = float(forex.cost_value(s, b + 1e-10))
    assert left == pytest.approx(right, rel=1e-9)
    dl = (3 * forex.cost_value(s, b) - 4 * forex.cost_value(s, b - h) + forex.cost_value(s, b - 2 * h)) / (2 * h)
    dr = (-3 * forex.cost_value(s, b) + 4 * forex.cost_value(s, b + h) - forex.cost_value(s, b + 2 * h)) / (2 * h)
    assert dl == pytest.approx(dr, rel=1e-6)


def test_printed_variant_reproduces_reported_triplet():
    model, cost = forex.build(forex.ForexParams(), r_variant="paper-verbatim")
    s = optimize_a(model, cost)
    assert (s.a_star, s.b_star) == pytest.approx((5.066, 12.1756), rel=2e-3)
    assert s.rho_star == pytest.approx(0.042423, rel=0.02)


def test_param_validation():
    for bad in ({"c": 0}, {"lambda": -1}, {"alpha": 0}, {"delta": -0.1}):
        with pytest.raises(ConfigurationError):
            forex.ForexParams.from_mapping(bad)
    with pytest.raises(ConfigurationError):
        forex.ForexParams.from_mapping({"sigma": 1})
    with pytest.raises(ConfigurationError):
        forex.build(forex.ForexParams(), r_variant="other")


def test_param_aliases():
    p = forex.ForexParams.from_mapping({"c": 100, "lam": 10, "alpha": 0.3, "delta": 0.5})
    assert p == forex.ForexParams(100.0, 10.0, 0.3, 0.5)
