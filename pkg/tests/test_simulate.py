import dataclasses
import math

import numpy as np
import pytest

from impulse_delay.band import BandPolicy, _kit as band_kit
from impulse_delay.errors import ConfigurationError, HorizonWarning, SimulationError
from impulse_delay.models import forex, labor
from impulse_delay.simulate import (
    THREADS_ENV,
    PolicyEstimate,
    SimConfig,
    default_workers,
    mc_delayed_cost,
    mc_expected_reward,
    simulate_band,
    simulate_threshold,
)
from impulse_delay.threshold import ThresholdCostStructure, ThresholdPolicy, _kit as threshold_kit

FX_MC = dict(dt=0.02, horizon=100.0)


def _fx_policy(sol):
    return ThresholdPolicy(sol.a_star, sol.b_star)


def test_same_seed_same_estimate(fx_problem, fx_solutions):
    model, cost = fx_problem[1.0]
    cfg = SimConfig(n_paths=2000, seed=5, **FX_MC)
    a = simulate_threshold(model, cost, _fx_policy(fx_solutions[1.0]), 3.0, cfg)
    b = simulate_threshold(model, cost, _fx_policy(fx_solutions[1.0]), 3.0, cfg)
    assert (a.mean, a.stderr) == (b.mean, b.stderr)
    c = simulate_threshold(model, cost, _fx_policy(fx_solutions[1.0]), 3.0, dataclasses.replace(cfg, seed=6))
    assert c.mean != a.mean


def test_worker_count_does_not_change_result(labor_problem, labor_solutions):
    model, cost = labor_problem[0.5]
    base = dict(n_paths=4000, chunk_size=1000, seed=9, dt=0.05, horizon=50.0)
    one = simulate_band(model, cost, labor_solutions[0.5].policy, 5.0, SimConfig(workers=1, **base))
    many = simulate_band(model, cost, labor_solutions[0.5].policy, 5.0, SimConfig(workers=3, **base))
    assert one.to_dict() == many.to_dict()


def test_default_workers_from_environment(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert default_workers() == 3 and SimConfig().workers == 3
    monkeypatch.setenv(THREADS_ENV, "junk")
    assert default_workers() == 1


def test_stderr_scales_with_inverse_root_paths(fx_problem, fx_solutions):
    model, cost = fx_problem[1.0]
    pol = _fx_policy(fx_solutions[1.0])
    small = simulate_threshold(model, cost, pol, 0.0, SimConfig(n_paths=2000, seed=1, dt=0.05, horizon=60.0))
    large = simulate_threshold(model, cost, pol, 0.0, SimConfig(n_paths=8000, seed=2, dt=0.05, horizon=60.0))
    assert small.stderr / large.stderr == pytest.approx(2.0, rel=0.2)


def test_costless_inaction_is_worth_nothing(fx_problem):
    model, _ = fx_problem[1.0]
    cost = ThresholdCostStructure(lambda x: np.zeros_like(x), lambda x, y: np.full_like(np.asarray(x), -1e-12),
                                  delay=1.0, expected_reward=lambda x: 0 * x)
    est = simulate_threshold(model, cost, ThresholdPolicy(0.0, 1.0), 0.0,
                             SimConfig(n_paths=1000, dt=0.05, horizon=50.0))
    assert abs(est.mean) < 1e-9


@pytest.mark.parametrize("x0", [0.0, 5.0, 10.0])
def test_no_delay_threshold_value_matches_solver(fx_problem, fx_solutions, x0):
    model, cost = fx_problem[0.0]
    sol = fx_solutions[0.0]
    est = simulate_threshold(model, cost, _fx_policy(sol), x0, SimConfig(n_paths=20_000, seed=31, **FX_MC))
    assert abs(est.z_score(float(sol.v(x0)))) < 3


def test_no_delay_band_value_matches_solver(labor_problem, labor_solutions):
    model, cost = labor_problem[0.0]
    sol = labor_solutions[0.0]
    est = simulate_band(model, cost, sol.policy, 10.0, SimConfig(n_paths=20_000, seed=32, dt=0.05, horizon=400.0))
    assert abs(est.z_score(float(sol.v(10.0)))) < 3


def test_hires_never_fall_inside_delay_window():
    # a narrow band so that the lower barrier is often crossed while a firing is pending
    prm = labor.LaborParams(delta_lag=0.5, sigma=0.8)
    model, cost = labor.build(prm)
    est = simulate_band(model, cost, BandPolicy(1.0, 1.5, 2.0, 2.5), 2.0,
                        SimConfig(n_paths=400, dt=0.01, horizon=40.0, trace_paths=400, chunk_size=400))
    trace = est.diagnostics["trace"]
    assert est.diagnostics["suppressed_hires"] > 0
    by_path: dict[int, list] = {}
    for path, t, kind in trace:
        by_path.setdefault(path, []).append((t, kind))
    windows = hires = 0
    for events in by_path.values():
        triggers = [t for t, kind in events if kind == "trigger"]
        for t, kind in events:
            if kind == "hire":
                hires += 1
                assert not any(tt - 1e-12 <= t <= tt + prm.delta_lag + 1e-12 for tt in triggers)
        windows += len(triggers)
    assert windows > 0 and hires > 0
    # every trigger is followed by exactly one execution one delay later (unless past the horizon)
    for events in by_path.values():
        execs = [t for t, kind in events if kind == "execute"]
        trig = [t for t, kind in events if kind == "trigger"]
        for t in trig:
            if t + prm.delta_lag <= 40.0:
                assert any(abs(e - (t + prm.delta_lag)) < 1e-9 for e in execs)


def test_degenerate_band_equals_expected_reward():
    prm = labor.LaborParams(r=0.5)  # fast discounting keeps the horizon short
    model, cost = labor.build(prm)
    policy = BandPolicy(1e-9, 2e-9, 1e8, 2e8)
    est = simulate_band(model, cost, policy, 3.0, SimConfig(n_paths=4000, dt=0.05))
    assert est.diagnostics["mean_fires_per_path"] == 0 and est.diagnostics["mean_hires_per_path"] == 0
    ref = mc_expected_reward(model, lambda y: labor.running_reward(y, prm), 3.0, SimConfig(n_paths=40_000))
    assert abs(est.mean - float(labor.g(3.0, prm))) < 3 * est.stderr + 1e-3 * abs(est.mean)
    assert abs(est.mean - ref.mean) < 3 * math.hypot(est.stderr, ref.stderr) + 1e-3 * abs(est.mean)


def test_zero_delay_one_shot_cost_is_exact(fx_problem, labor_problem):
    model, cost = fx_problem[0.0]
    est = mc_delayed_cost(model, cost, 12.0, 5.0, SimConfig(n_paths=100))
    assert est.stderr <= 1e-14 * abs(est.mean)
    assert est.mean == pytest.approx(float(threshold_kit(model, cost).kbar(12.0, 5.0)), rel=1e-15)
    model, cost = labor_problem[0.0]
    est = mc_delayed_cost(model, cost, 20.0, 7.0, SimConfig(n_paths=100))
    assert est.stderr <= 1e-14 * abs(est.mean)
    assert est.mean == pytest.approx(float(band_kit(model, cost).c1bar(20.0, 7.0)), rel=1e-15)


def test_delay_window_uses_whole_steps(fx_problem, fx_solutions):
    model, cost = fx_problem[1.0]
    est = simulate_threshold(model, cost, _fx_policy(fx_solutions[1.0]), 0.0,
                             SimConfig(n_paths=100, dt=0.3, horizon=10.0))
    assert est.diagnostics["lag_steps"] == 3
    assert est.diagnostics["dt"] == pytest.approx(1.0 / 3)


def test_short_horizon_warns(fx_problem, fx_solutions):
    model, cost = fx_problem[1.0]
    with pytest.warns(HorizonWarning):
        est = simulate_threshold(model, cost, _fx_policy(fx_solutions[1.0]), 0.0,
                                 SimConfig(n_paths=200, dt=0.05, horizon=5.0))
    assert est.discounted_tail_bound > 0


def test_start_inside_intervention_region_acts_immediately(fx_problem, fx_solutions):
    model, cost = fx_problem[1.0]
    sol = fx_solutions[1.0]
    est = simulate_threshold(model, cost, _fx_policy(sol), 20.0, SimConfig(n_paths=20_000, seed=4, **FX_MC))
    assert abs(est.z_score(float(sol.v(20.0)))) < 3


@pytest.mark.parametrize("kw", [
    dict(n_paths=0), dict(dt=0.0), dict(horizon=-1.0), dict(n_paths=3), dict(seed=-1),
    dict(workers=0), dict(chunk_size=1),
])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        SimConfig(**kw)


def test_estimate_validation():
    with pytest.raises(SimulationError):
        PolicyEstimate(0.0, -1.0, 10, 0)
    est = PolicyEstimate(1.0, 0.5, 10, 0)
    assert est.z_score(0.0) == 2.0 and est.to_dict()["mean"] == 1.0


def test_simulation_needs_exact_transition(fx_problem):
    model, cost = fx_problem[1.0]
    bare = dataclasses.replace(model, transition=None)
    with pytest.raises(ConfigurationError):
        simulate_threshold(bare, cost, ThresholdPolicy(0.0, 1.0), 0.0, SimConfig(n_paths=10))


def test_band_start_below_hiring_barrier(labor_problem, labor_solutions):
    model, cost = labor_problem[0.0]
    sol = labor_solutions[0.0]
    est = simulate_band(model, cost, sol.policy, 0.5, SimConfig(n_paths=10_000, seed=33, dt=0.05, horizon=400.0))
    assert est.diagnostics["mean_hires_per_path"] >= 1
    assert abs(est.z_score(float(sol.v(0.5)))) < 3
