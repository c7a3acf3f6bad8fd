import csv
import io
import json

import numpy as np
import pytest

from impulse_delay import cli
from impulse_delay.errors import SimulationError

FX_FLAGS = ["--c", "150", "--lambda", "50", "--alpha", "0.2"]


def _run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _csv(text):
    return list(csv.reader(io.StringIO(text)))


@pytest.fixture(scope="module")
def fx_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fx")
    assert cli.main(["solve-threshold", *FX_FLAGS, "--delta", "1.0", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def band_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("band")
    assert cli.main(["solve-band", "--delta", "0.5", "--compare-delay", "0", "--out", str(out)]) == 0
    return out


def test_solve_threshold_summary(fx_run):
    doc = json.loads((fx_run / "solution.json").read_text())
    assert doc["schema_version"] == cli.SCHEMA_VERSION
    s = doc["solution"]
    assert s["a_star"] == pytest.approx(5.066, rel=0.02)
    assert s["b_star"] == pytest.approx(12.1756, rel=0.02)
    assert s["rho_star"] == pytest.approx(0.042423, rel=0.02)
    assert abs(doc["diagnostics"]["smooth_fit_residual"]) < 1e-8
    oracle = doc["oracle"]
    assert oracle["b_gap"] <= oracle["grid_resolution"] and oracle["relative_gap"] < 1e-6


def test_solve_threshold_curve(fx_run):
    rows = _csv((fx_run / "curve.csv").read_text())
    assert rows[0] == ["x", "v", "u", "region"]
    assert {r[3] for r in rows[1:]} == {"continuation", "intervention"}
    assert len(rows) == 502


def test_solve_threshold_no_delay(capsys):
    code, out, _ = _run(capsys, "solve-threshold", *FX_FLAGS, "--delta", "0", "--no-oracle")
    assert code == 0
    s = json.loads(out)["solution"]
    assert (s["a_star"], s["b_star"], s["rho_star"]) == pytest.approx((5.07723, 12.2611, 0.0492262), rel=0.02)
    assert "oracle" not in json.loads(out)


def test_emit_diff_is_nonnegative(tmp_path, capsys):
    code, out, _ = _run(capsys, "solve-threshold", *FX_FLAGS, "--delta", "1", "--emit-diff", "--no-oracle",
                        "--out", str(tmp_path))
    assert code == 0
    assert json.loads(out)["cost_difference_min"] >= 0
    rows = _csv((tmp_path / "cost_difference.csv").read_text())
    assert rows[0] == ["x", "cost_delay_minus_no_delay"]
    assert all(float(r[1]) >= 0 for r in rows[1:])


def test_solve_band_with_comparison(band_run):
    doc = json.loads((band_run / "solution.json").read_text())
    s = doc["solution"]
    want = cli.REFERENCE_BAND[0.5]
    for k, v in want.items():
        assert s[k] == pytest.approx(v, rel=0.01)
    assert doc["comparison"]["longer_delay_region_contains_shorter"] is True
    rows = _csv((band_run / "curve.csv").read_text())
    assert {r[3] for r in rows[1:]} == {"hire", "continuation", "fire"}


def test_round_trip_reproduces_curve(fx_run, band_run):
    for run, kind, grid in ((fx_run, "threshold", cli._threshold_grid), (band_run, "band", cli._band_grid)):
        _, _, _, sol = cli.load_solution(run / "solution.json")
        rows = cli.curve_rows(kind, sol, grid(sol))
        assert cli.write_csv(None, ("x", "v", "u", "region"), rows) == (run / "curve.csv").read_text()


def test_load_solution_rejects_unknown_schema(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"schema_version": 99}))
    with pytest.raises(cli.ConfigurationError):
        cli.load_solution(path)


def test_simulate_is_byte_deterministic(fx_run, tmp_path, capsys):
    args = ["simulate", "--solution", str(fx_run / "solution.json"), "--x0", "0", "--x0", "10",
            "--paths", "2000", "--dt", "0.05", "--horizon", "60", "--seed", "7"]
    _, first, _ = _run(capsys, *args, "--threads", "1")
    _, second, _ = _run(capsys, *args, "--threads", "2")
    assert first == second
    doc = json.loads(first)
    assert [e["x0"] for e in doc["estimates"]] == [0.0, 10.0]
    assert all("z_score" in e for e in doc["estimates"])


def test_simulate_explicit_policy(capsys):
    code, out, _ = _run(capsys, "simulate", "--model", "labor", "--param", "delta_lag=0.5",
                        "--policy", "1.0,2.1,7.1,36.6", "--x0", "5", "--paths", "200", "--dt", "0.1",
                        "--horizon", "50")
    assert code == 0
    doc = json.loads(out)
    assert doc["policy"] == [1.0, 2.1, 7.1, 36.6] and "z_score" not in doc["estimates"][0]


def test_simulate_policy_shape_mismatch(capsys):
    code, _, err = _run(capsys, "simulate", "--model", "labor", "--policy", "1,2", "--x0", "1")
    assert code == cli.EXIT_CONFIG and "policies need 4" in err


def test_simulate_solution_model_mismatch(fx_run, capsys):
    code, _, _ = _run(capsys, "simulate", "--model", "labor", "--solution", str(fx_run / "solution.json"),
                      "--x0", "1")
    assert code == cli.EXIT_CONFIG


def test_simulate_needs_policy(capsys):
    code, _, _ = _run(capsys, "simulate", "--model", "forex", "--x0", "1")
    assert code == cli.EXIT_CONFIG


def test_configuration_error_exit_code(capsys):
    code, _, err = _run(capsys, "solve-threshold", "--alpha", "-1")
    assert code == cli.EXIT_CONFIG and "configuration error" in err


def test_no_action_is_configuration_error(capsys):
    code, _, _ = _run(capsys, "solve-band", "--b", "0.1", "--r", "0.05")
    assert code == cli.EXIT_CONFIG


def test_solver_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": "forex", "params": {"delta": 1.0},
                               "solver_options": {"window": [-40, -35]}}))
    code, _, err = _run(capsys, "solve-threshold", "--config", str(cfg), "--no-oracle")
    assert code == cli.EXIT_SOLVER and "solver error" in err


def test_simulation_error_exit_code(monkeypatch, capsys):
    def boom(*a, **k):
        raise SimulationError("diverged")

    monkeypatch.setattr(cli, "simulate_threshold", boom)
    code, _, err = _run(capsys, "simulate", "--model", "forex", "--policy", "1,2", "--x0", "0", "--paths", "10")
    assert code == cli.EXIT_SIM and "diverged" in err


def test_toml_config_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text('model = "forex"\n[params]\nc = 150\nlambda = 50\nalpha = 0.2\ndelta = 0.5\n'
                   '[solver_options]\na_grid = 120\n')
    code, out, _ = _run(capsys, "solve-threshold", "--config", str(cfg), "--no-oracle")
    assert code == 0
    half = json.loads(out)["solution"]
    assert half["delay"] == 0.5
    code, out, _ = _run(capsys, "solve-threshold", "--config", str(cfg), "--delta", "0", "--no-oracle")
    s = json.loads(out)["solution"]
    assert s["delay"] == 0.0 and s["b_star"] > half["b_star"]


def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": "forex", "solverz": {}}))
    code, _, _ = _run(capsys, "solve-threshold", "--config", str(cfg))
    assert code == cli.EXIT_CONFIG


def test_config_rejects_wrong_solver(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": "forex", "solver": "band"}))
    code, _, _ = _run(capsys, "solve-threshold", "--config", str(cfg))
    assert code == cli.EXIT_CONFIG


def test_config_rejects_nonpositive_tolerance(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": "forex", "solver_options": {"a_tol": 0}}))
    code, _, _ = _run(capsys, "solve-threshold", "--config", str(cfg))
    assert code == cli.EXIT_CONFIG


def test_sweep_table(tmp_path, capsys):
    code, out, _ = _run(capsys, "sweep", "--model", "forex", "--param", "delay", "--values", "0,0.5,1",
                        "--out", str(tmp_path))
    assert code == 0
    rows = _csv(out)
    assert rows[0][0] == "delay" and rows[0][-1] == "status"
    b = [float(r[rows[0].index("b_star")]) for r in rows[1:]]
    assert np.all(np.diff(b) < 0)
    assert (tmp_path / "sweep.csv").read_text() == out


@pytest.mark.slow
def test_paper_table(capsys):
    code, out, _ = _run(capsys, "paper-table")
    assert code == 0
    rows = _csv(out)
    assert rows[0] == ["problem", "delay", "variant", "quantity", "reference", "computed", "rel_error"]
    body = rows[1:]
    assert len(body) == 2 * 2 * 3 + 2 * 6
    assert {r[2] for r in body if r[0] == "forex"} == {"first-principles", "paper-verbatim"}
