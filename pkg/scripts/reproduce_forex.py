"""Solve the exchange-rate intervention problem for a range of delays.

Prints the optimal (a*, b*, rho*) for each delay under both closed forms of the
delayed intervention cost, and writes value curves to ``--out`` if given.

    python3 scripts/reproduce_forex.py --delays 0 0.5 1 2 --out runs/forex
"""

import argparse
import time
from pathlib import Path

import numpy as np

from impulse_delay.models import forex
from impulse_delay.threshold import optimize_a


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--delays", type=float, nargs="+", default=[0.0, 1.0])
    ap.add_argument("--fixed-cost", type=float, default=150.0)
    ap.add_argument("--proportional-cost", type=float, default=50.0)
    ap.add_argument("--discount", type=float, default=0.2)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    print(f"{'delay':>6} {'variant':>17} {'a*':>10} {'b*':>10} {'rho*':>11} {'secs':>6}")
    for delay in args.delays:
        params = forex.ForexParams(args.fixed_cost, args.proportional_cost, args.discount, delay)
        variants = ["first-principles"] + (["paper-verbatim"] if delay > 0 else [])
        for variant in variants:
            t0 = time.perf_counter()
            sol = optimize_a(*forex.build(params, r_variant=variant))
            secs = time.perf_counter() - t0
            print(f"{delay:6.2f} {variant:>17} {sol.a_star:10.5f} {sol.b_star:10.5f} {sol.rho_star:11.7f} {secs:6.2f}")
            if args.out and variant == "first-principles":
                args.out.mkdir(parents=True, exist_ok=True)
                xs = np.linspace(-20.0, 30.0, 501)
                np.savetxt(args.out / f"value_delay{delay:g}.csv", np.column_stack([xs, sol.v(xs)]),
                           delimiter=",", header="x,v", comments="")


if __name__ == "__main__":
    main()
