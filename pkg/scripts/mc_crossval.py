"""Monte-Carlo check of the solved value functions at a few starting states.

    python3 scripts/mc_crossval.py --paths 100000 --threads 1
"""

import argparse
import time

from impulse_delay.band import optimize_qc
from impulse_delay.models import forex, labor
from impulse_delay.simulate import SimConfig, simulate_band, simulate_threshold
from impulse_delay.threshold import ThresholdPolicy, optimize_a


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    extra = {} if args.threads is None else {"workers": args.threads}

    fx_model, fx_cost = forex.build(forex.ForexParams(delay=1.0))
    fx = optimize_a(fx_model, fx_cost)
    lab_model, lab_cost = labor.build(labor.LaborParams(delta_lag=0.5))
    lab = optimize_qc(lab_model, lab_cost)

    runs = [("forex", x0, lambda x0: simulate_threshold(
                fx_model, fx_cost, ThresholdPolicy(fx.a_star, fx.b_star), x0,
                SimConfig(n_paths=args.paths, seed=args.seed, dt=0.02, horizon=100.0, **extra)), fx.v)
            for x0 in (0.0, 5.0, 10.0)]
    runs += [("labor", x0, lambda x0: simulate_band(
                lab_model, lab_cost, lab.policy, x0,
                SimConfig(n_paths=args.paths, seed=args.seed, dt=0.05, horizon=400.0, **extra)), lab.v)
             for x0 in (2.0, 5.0, 10.0)]
    print(f"{'model':>6} {'x0':>5} {'analytic':>12} {'mc':>12} {'stderr':>10} {'z':>6} {'secs':>6}")
    for name, x0, run, v in runs:
        t0 = time.perf_counter()
        est = run(x0)
        ref = float(v(x0))
        print(f"{name:>6} {x0:5.1f} {ref:12.5f} {est.mean:12.5f} {est.stderr:10.2e} "
              f"{est.z_score(ref):6.2f} {time.perf_counter() - t0:6.1f}")


if __name__ == "__main__":
    main()
