"""Gap of the third example at t = delta eps |log eps| against its prediction."""

import argparse
import pathlib

from homlab.experiments import sharpness_csv, sharpness_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("outdir", type=pathlib.Path)
    ap.add_argument("--delta", type=float, default=1.0)
    args = ap.parse_args()
    args.outdir.mkdir(parents=True, exist_ok=True)
    rows = sharpness_experiment(args.delta, (1e-3, 1e-4, 1e-5))
    sharpness_csv(rows, args.outdir / "sharpness.csv")
    for r in rows:
        print(f"eps={r.epsilon:.0e} ratio={r.ratio:.8f}")


if __name__ == "__main__":
    main()
