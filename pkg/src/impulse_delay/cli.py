"""Command-line entry point: ``impulse-delay <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 simulation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import band as band_mod
from . import threshold as thr
from .config import RunConfig, load_config, read_document
from .errors import (
    ConfigurationError,
    DegeneratePolicyError,
    DomainError,
    ImpulseError,
    IntegrabilityError,
    NoActionError,
    NoBandError,
    NoThresholdError,
    OracleError,
    SimulationError,
)
from .models import forex, labor
from .simulate import SimConfig, simulate_band, simulate_threshold

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_SIM = 0, 2, 3, 4

# published reference solutions the reproduction table is compared against
REFERENCE_THRESHOLD = {
    1.0: {"a_star": 5.066, "b_star": 12.1756, "rho_star": 0.042423},
    0.0: {"a_star": 5.07723, "b_star": 12.2611, "rho_star": 0.0492262},
}
REFERENCE_BAND = {
    0.0: {"rho_star": 0.0002003, "tau_star": 38.1633, "p_star": 1.0664, "q_star": 2.125, "c_star": 7.240, "d_star": 35.728},
    0.5: {"rho_star": 0.0001725, "tau_star": 38.1597, "p_star": 1.0661, "q_star": 2.100, "c_star": 7.120, "d_star": 36.640},
}

_MODEL_OPTIONS = ("r_variant", "window")


# --- problem construction ------------------------------------------------------------


def _split_options(cfg: RunConfig) -> tuple[dict, dict]:
    opts = dict(cfg.solver_options)
    build_kw = {k: opts.pop(k) for k in _MODEL_OPTIONS if k in opts}
    if "window" in build_kw:
        build_kw["window"] = tuple(float(v) for v in build_kw["window"])
    for k in ("a_bounds", "qc_bounds"):
        if k in opts and opts[k] is not None:
            opts[k] = tuple(float(v) for v in opts[k])
    return build_kw, opts


def build_problem(cfg: RunConfig):
    build_kw, opts = _split_options(cfg)
    if cfg.model == "forex":
        params = forex.ForexParams.from_mapping(cfg.params)
        model, cost = forex.build(params, **build_kw)
        try:
            solver_cfg = thr.ThresholdConfig(**opts)
        except TypeError as exc:
            raise ConfigurationError(f"bad threshold solver option: {exc}") from exc
    else:
        if "r_variant" in build_kw:
            raise ConfigurationError("r_variant applies to the forex model only")
        params = labor.LaborParams.from_mapping(cfg.params)
        model, cost = labor.build(params, **build_kw)
        try:
            solver_cfg = band_mod.BandConfig(**opts)
        except TypeError as exc:
            raise ConfigurationError(f"bad band solver option: {exc}") from exc
    return params, model, cost, solver_cfg


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _config_record(cfg: RunConfig) -> dict:
    return {"model": cfg.model, "params": cfg.params, "solver": cfg.solver, "solver_options": cfg.solver_options}


# --- curves ----------------------------------------------------------------------------


def _threshold_grid(sol, lo=None, hi=None, n=501):
    span = sol.b_star - sol.a_star
    lo = sol.a_star - 2 * span if lo is None else lo
    hi = sol.b_star + span if hi is None else hi
    return np.linspace(lo, hi, n)


def _band_grid(sol, lo=None, hi=None, n=501):
    lo = 0.5 * sol.p_star if lo is None else lo
    hi = 1.5 * sol.d_star if hi is None else hi
    return np.geomspace(lo, hi, n)


def curve_rows(kind: str, sol, xs) -> list[tuple]:
    u = np.atleast_1d(sol.u(xs))
    v = np.atleast_1d(sol.v(xs))
    rows = []
    for x, vv, uu in zip(xs, v, u):
        if kind == "threshold":
            tag = "intervention" if x >= sol.b_star else "continuation"
        else:
            tag = "hire" if x <= sol.p_star else ("fire" if x >= sol.d_star else "continuation")
        rows.append((float(x), float(vv), float(uu), tag))
    return rows


def write_csv(path: Path | None, header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    text = buf.getvalue()
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    return text


def write_json(path: Path | None, doc: dict) -> str:
    text = json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    return text


# --- solution documents ----------------------------------------------------------------


def solution_document(cfg: RunConfig, sol, kind: str, extra: dict | None = None) -> dict:
    diag = {k: v for k, v in sol.diagnostics.items() if k != "trace"}
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "config": _config_record(cfg),
        "solution": sol.summary(),
        "diagnostics": diag,
    }
    if extra:
        doc.update(extra)
    return doc


def load_solution(path: str | Path):
    """Rebuild (config, model, cost, solution) from a written solution document, without re-solving."""
    doc = read_document(path)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported solution schema {doc.get('schema_version')!r}")
    cfg = RunConfig.from_dict(doc["config"])
    _, model, cost, _ = build_problem(cfg)
    s = doc["solution"]
    if doc["kind"] == "threshold":
        sol = thr.ThresholdSolution(model, cost, s["a_star"], s["b_star"], s["rho_star"], doc.get("diagnostics", {}))
    elif doc["kind"] == "band":
        sol = band_mod.BandSolution(model, cost, s["p_star"], s["q_star"], s["c_star"], s["d_star"],
                                    s["rho_star"], s["tau_star"], doc.get("diagnostics", {}))
    else:
        raise ConfigurationError(f"unknown solution kind {doc['kind']!r}")
    return cfg, model, cost, sol


# --- subcommands -----------------------------------------------------------------------


def _solve(cfg: RunConfig):
    _, model, cost, scfg = build_problem(cfg)
    if cfg.solver == "threshold":
        return model, cost, thr.optimize_a(model, cost, scfg)
    return model, cost, band_mod.optimize_qc(model, cost, scfg)


def _oracle_check(model, cost, sol) -> dict:
    res = thr.gamma_fixed_point_oracle(model, cost, sol.a_star)
    u_a = float(sol.u(sol.a_star))
    return {
        "gamma_star": res.gamma_star,
        "b_gamma_star": res.b_gamma_star,
        "u_at_a_star": u_a,
        "relative_gap": abs(u_a - res.gamma_star) / (1 + abs(res.gamma_star)),
        "b_gap": abs(res.b_gamma_star - sol.b_star),
        "grid_resolution": res.resolution,
        "iterations": res.iterations,
    }


def cmd_solve_threshold(args, cfg: RunConfig) -> int:
    model, cost, sol = _solve(cfg)
    extra = {}
    if not args.no_oracle:
        extra["oracle"] = _oracle_check(model, cost, sol)
    out = Path(cfg.output) if cfg.output else None
    xs = _threshold_grid(sol, args.x_min, args.x_max, args.points)
    rows = curve_rows("threshold", sol, xs)
    if args.emit_diff:
        params = {k: v for k, v in cfg.params.items() if k not in ("delay", "delta")}
        base = RunConfig.from_dict({**_config_record(cfg), "params": {**params, "delay": 0.0}})
        _, _, sol0 = _solve(base)
        # costs are the negated values
        diff = -np.atleast_1d(sol.v(xs)) + np.atleast_1d(sol0.v(xs))
        extra["no_delay_solution"] = sol0.summary()
        extra["cost_difference_min"] = float(diff.min())
        if out is not None:
            write_csv(out / "cost_difference.csv", ("x", "cost_delay_minus_no_delay"), zip(xs.tolist(), diff.tolist()))
    doc = solution_document(cfg, sol, "threshold", extra)
    if out is not None:
        write_json(out / "solution.json", doc)
        write_csv(out / "curve.csv", ("x", "v", "u", "region"), rows)
    sys.stdout.write(write_json(None, doc))
    return EXIT_OK


def cmd_solve_band(args, cfg: RunConfig) -> int:
    model, cost, sol = _solve(cfg)
    extra = {}
    if args.compare_delay is not None:
        other_cfg = RunConfig.from_dict({**_config_record(cfg), "params": {**cfg.params, "delta_lag": args.compare_delay}})
        _, _, other = _solve(other_cfg)
        lo, hi = (sol, other) if cost.delay <= args.compare_delay else (other, sol)
        extra["comparison"] = {
            "other_delay": args.compare_delay,
            "other_solution": other.summary(),
            "longer_delay_region_contains_shorter": bool(hi.p_star < lo.p_star and hi.d_star > lo.d_star),
        }
    out = Path(cfg.output) if cfg.output else None
    doc = solution_document(cfg, sol, "band", extra)
    if out is not None:
        write_json(out / "solution.json", doc)
        xs = _band_grid(sol, args.x_min, args.x_max, args.points)
        write_csv(out / "curve.csv", ("x", "v", "u", "region"), curve_rows("band", sol, xs))
    sys.stdout.write(write_json(None, doc))
    return EXIT_OK


def _sim_config(cfg: RunConfig, args) -> SimConfig:
    sim = dict(cfg.simulation)
    for key, val in (("n_paths", args.paths), ("dt", args.dt), ("seed", args.seed),
                     ("workers", args.threads), ("horizon", args.horizon)):
        if val is not None:
            sim[key] = val
    if args.no_bridge:
        sim["bridge_correction"] = False
    try:
        return SimConfig(**sim)
    except TypeError as exc:
        raise ConfigurationError(f"bad simulation option: {exc}") from exc


def cmd_simulate(args, cfg: RunConfig) -> int:
    sol = None
    if args.solution:
        cfg_sol, model, cost, sol = load_solution(args.solution)
        if args.config or args.model:
            if (cfg.model, cfg.params) != (cfg_sol.model, cfg_sol.params):
                raise ConfigurationError("policy/solution file does not match the configured model")
        cfg = RunConfig.from_dict({**_config_record(cfg_sol), "simulation": cfg.simulation, "output": cfg.output})
    else:
        _, model, cost, _ = build_problem(cfg)
    if args.policy:
        vals = [float(v) for v in args.policy.split(",")]
        expected = 2 if cfg.solver == "threshold" else 4
        if len(vals) != expected:
            raise ConfigurationError(f"{cfg.model} policies need {expected} comma-separated levels")
        policy = thr.ThresholdPolicy(*vals) if expected == 2 else band_mod.BandPolicy(*vals)
        sol = None
    elif sol is not None:
        policy = thr.ThresholdPolicy(sol.a_star, sol.b_star) if cfg.solver == "threshold" else sol.policy
    else:
        raise ConfigurationError("simulate needs --solution or --policy")
    scfg = _sim_config(cfg, args)
    reports = []
    for x0 in args.x0:
        if cfg.solver == "threshold":
            est = simulate_threshold(model, cost, policy, x0, scfg)
        else:
            est = simulate_band(model, cost, policy, x0, scfg)
        rec = {"x0": x0, "mean": est.mean, "stderr": est.stderr, "n_paths": est.n_paths, "seed": est.seed,
               "discounted_tail_bound": est.discounted_tail_bound,
               "diagnostics": {k: v for k, v in est.diagnostics.items() if k != "trace"}}
        if sol is not None:
            ref = float(sol.v(x0))
            rec["analytic_value"] = ref
            rec["z_score"] = est.z_score(ref)
        reports.append(rec)
    doc = {"schema_version": SCHEMA_VERSION, "model": cfg.model, "params": cfg.params,
           "policy": list(policy.astuple()) if hasattr(policy, "astuple") else [policy.a, policy.b],
           "simulation": {"n_paths": scfg.n_paths, "dt": scfg.dt, "horizon": scfg.horizon, "seed": scfg.seed,
                          "bridge_correction": scfg.bridge_correction, "antithetic": scfg.antithetic},
           "estimates": reports}
    out = Path(cfg.output) if cfg.output else None
    text = write_json(out / "simulation.json" if out else None, doc)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig) -> int:
    values = [float(v) for v in args.values.split(",")]
    rows = []
    header = None
    for val in values:
        run = RunConfig.from_dict({**_config_record(cfg), "params": {**cfg.params, args.param: val}})
        try:
            _, _, sol = _solve(run)
            summ = sol.summary()
            status = "ok"
        except (NoThresholdError, NoBandError, DegeneratePolicyError) as exc:
            summ, status = {}, f"failed: {exc}"
        if header is None and summ:
            header = [args.param, *summ.keys(), "status"]
        rows.append((val, summ, status))
    if header is None:
        raise NoThresholdError("every sweep point failed") if cfg.solver == "threshold" else NoBandError("every sweep point failed")
    keys = header[1:-1]
    table = [(v, *[s.get(k, math.nan) for k in keys], st) for v, s, st in rows]
    out = Path(cfg.output) / "sweep.csv" if cfg.output else None
    sys.stdout.write(write_csv(out, header, table))
    return EXIT_OK


def _rel(a, b):
    return abs(a - b) / abs(b)


def paper_table_rows(r_variants=("first-principles", "paper-verbatim")) -> list[dict]:
    rows = []
    for delay, ref in REFERENCE_THRESHOLD.items():
        for variant in r_variants:
            model, cost = forex.build(forex.ForexParams(delay=delay), r_variant=variant)
            t0 = time.perf_counter()
            sol = thr.optimize_a(model, cost)
            elapsed = time.perf_counter() - t0
            got = sol.summary()
            for key, want in ref.items():
                rows.append({"problem": "forex", "delay": delay, "variant": variant, "quantity": key,
                             "reference": want, "computed": got[key], "rel_error": _rel(got[key], want),
                             "seconds": elapsed})
    for delay, ref in REFERENCE_BAND.items():
        model, cost = labor.build(labor.LaborParams(delta_lag=delay))
        t0 = time.perf_counter()
        sol = band_mod.optimize_qc(model, cost)
        elapsed = time.perf_counter() - t0
        got = sol.summary()
        for key, want in ref.items():
            rows.append({"problem": "labor", "delay": delay, "variant": "closed-form", "quantity": key,
                         "reference": want, "computed": got[key], "rel_error": _rel(got[key], want),
                         "seconds": elapsed})
    return rows


def cmd_paper_table(args, cfg: RunConfig) -> int:
    rows = paper_table_rows()
    header = ("problem", "delay", "variant", "quantity", "reference", "computed", "rel_error")
    table = [tuple(r[h] for h in header) for r in rows]
    out = Path(cfg.output) / "reproduction.csv" if cfg.output else None
    sys.stdout.write(write_csv(out, header, table))
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON or TOML run configuration")
    p.add_argument("--out", help="output directory")


def _forex_flags(p):
    p.add_argument("--c", type=float, help="fixed intervention cost")
    p.add_argument("--lambda", dest="lam", type=float, help="proportional intervention cost")
    p.add_argument("--alpha", type=float, help="discount rate")
    p.add_argument("--delta", type=float, help="implementation delay")
    p.add_argument("--r-variant", choices=("first-principles", "paper-verbatim"),
                   help="closed form used for the delayed cost")


def _labor_flags(p):
    for name in ("b", "r", "mu", "sigma", "A", "w", "c1", "c2", "c3", "c4"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--quit-rate", type=float, help="labor attrition rate")
    p.add_argument("--delta", type=float, help="firing delay")


def _curve_flags(p):
    p.add_argument("--x-min", type=float)
    p.add_argument("--x-max", type=float)
    p.add_argument("--points", type=int, default=501)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="impulse-delay", description="Impulse control with implementation delay")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-threshold", help="optimal threshold policy (forex model)")
    _common(p)
    _forex_flags(p)
    _curve_flags(p)
    p.add_argument("--emit-diff", action="store_true", help="also solve without delay and write the cost difference")
    p.add_argument("--no-oracle", action="store_true", help="skip the fixed-point cross-check")
    p.set_defaults(func=cmd_solve_threshold, model_default="forex")

    p = sub.add_parser("solve-band", help="optimal band policy (labor model)")
    _common(p)
    _labor_flags(p)
    _curve_flags(p)
    p.add_argument("--compare-delay", type=float, help="also solve at this delay and report region containment")
    p.set_defaults(func=cmd_solve_band, model_default="labor")

    p = sub.add_parser("simulate", help="Monte-Carlo value of a solved or given policy")
    _common(p)
    p.add_argument("--model", choices=("forex", "labor"))
    p.add_argument("--solution", help="solution.json written by a solve command")
    p.add_argument("--policy", help="explicit levels: a,b (forex) or p,q,c,d (labor)")
    p.add_argument("--x0", type=float, action="append", required=True, help="initial state (repeatable)")
    p.add_argument("--paths", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--no-bridge", action="store_true")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE", help="model parameter override")
    p.set_defaults(func=cmd_simulate, model_default=None)

    p = sub.add_parser("sweep", help="solve over a list of values of one parameter")
    _common(p)
    p.add_argument("--model", choices=("forex", "labor"))
    p.add_argument("--param", required=True, help="parameter name as used in config files")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep, model_default="forex")

    p = sub.add_parser("paper-table", help="reference solutions side by side with computed values")
    _common(p)
    p.set_defaults(func=cmd_paper_table, model_default="forex")
    return ap


def _overrides(args) -> dict:
    ov = {"output": args.out}
    model = getattr(args, "model", None) or (None if args.config else args.model_default)
    if args.command == "simulate" and args.solution and not model:
        model = "forex"  # placeholder; replaced by the solution's own config
    ov["model"] = model
    pairs = {
        "c": "c", "lam": "lambda", "alpha": "alpha",
        "b": "b", "r": "r", "mu": "mu", "sigma": "sigma", "A": "A", "w": "w",
        "c1": "c1", "c2": "c2", "c3": "c3", "c4": "c4", "quit_rate": "delta",
    }
    for attr, key in pairs.items():
        if getattr(args, attr, None) is not None:
            ov[f"params.{key}"] = getattr(args, attr)
    if getattr(args, "delta", None) is not None:
        # --delta is the implementation delay for both models
        ov["params.delay" if args.command == "solve-threshold" else "params.delta_lag"] = args.delta
    if getattr(args, "r_variant", None):
        ov["solver_options.r_variant"] = args.r_variant
    for item in getattr(args, "param", []) if args.command == "simulate" else []:
        if "=" not in item:
            raise ConfigurationError(f"--param expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        ov[f"params.{k}"] = float(v)
    return ov


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            cfg = load_config(args.config, _overrides(args))
            return args.func(args, cfg)
    except (ConfigurationError, DomainError, NoActionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NoThresholdError, NoBandError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        print(json.dumps(_jsonable(exc.diagnostics), default=str), file=sys.stderr)
        return EXIT_SOLVER
    except (DegeneratePolicyError, OracleError, IntegrabilityError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except ImpulseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
