"""Solve the labor-hiring band problem for a range of firing lags.

    python3 scripts/reproduce_labor.py --lags 0 0.25 0.5 1
"""

import argparse
import time

from impulse_delay.band import optimize_qc
from impulse_delay.models import labor


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lags", type=float, nargs="+", default=[0.0, 0.5])
    args = ap.parse_args()

    cols = ("p_star", "q_star", "c_star", "d_star", "rho_star", "tau_star")
    print(f"{'lag':>5} " + " ".join(f"{c:>12}" for c in cols) + f" {'secs':>6}")
    prev = None
    for lag in args.lags:
        t0 = time.perf_counter()
        sol = optimize_qc(*labor.build(labor.LaborParams(delta_lag=lag)))
        secs = time.perf_counter() - t0
        s = sol.summary()
        print(f"{lag:5.2f} " + " ".join(f"{s[c]:12.7g}" for c in cols) + f" {secs:6.2f}")
        if prev is not None and not (sol.p_star <= prev.p_star and sol.d_star >= prev.d_star):
            print("  note: inaction region did not widen relative to the previous lag")
        prev = sol


if __name__ == "__main__":
    main()
