"""Rate-law sweeps for the third and first examples; writes CSVs to OUTDIR."""

import argparse
import math
import pathlib

from homlab.experiments import DEFAULT_EPS, rate_experiment
from homlab.field import builtin


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("outdir", type=pathlib.Path)
    ap.add_argument("--jobs", type=int, default=4)
    args = ap.parse_args()
    args.outdir.mkdir(parents=True, exist_ok=True)

    e3 = rate_experiment(builtin("example3"), 0.0, lambda e: e * abs(math.log(e)), (1e-3, 1e-4, 1e-5), jobs=args.jobs)
    e3.to_csv(args.outdir / "rate_example3.csv")
    print("example3 products:", " ".join(f"{r.product:.6f}" for r in e3.rows))

    e1 = rate_experiment(builtin("example1"), 2.0, 1.0, DEFAULT_EPS, jobs=args.jobs)
    e1.to_csv(args.outdir / "rate_example1.csv")
    print(f"example1 fitted_c={e1.fitted_c:.6f} bounded={e1.bounded}")


if __name__ == "__main__":
    main()
