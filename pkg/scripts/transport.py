"""Transport errors for the shifted cosine and first-example fields."""

import argparse
import pathlib

import numpy as np

from homlab.transport import TransportProblem, solve_transport
from homlab.field import builtin

GRID = np.linspace(0.0, 1.0, 21)
TIMES = (0.25, 0.5, 1.0)


def sweep(name, fld, x1, outdir):
    table = None
    for eps in (1e-2, 1e-3, 1e-4):
        sol = solve_transport(TransportProblem(fld, "x1", 1.0, x1, GRID, TIMES, eps), table=table)
        table = sol.table
        sol.to_csv(outdir / f"transport_{name}_{eps:.0e}.csv")
        print(f"{name} eps={eps:.0e} sup_error={sol.sup_error:.3e} ratio={sol.sup_error / eps:.4f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("outdir", type=pathlib.Path)
    args = ap.parse_args()
    args.outdir.mkdir(parents=True, exist_ok=True)
    sweep("shifted_cosine", builtin("shifted_cosine", [2.0]), GRID, args.outdir)
    sweep("example1", builtin("example1"), np.linspace(2.0, 3.0, 21), args.outdir)


if __name__ == "__main__":
    main()
