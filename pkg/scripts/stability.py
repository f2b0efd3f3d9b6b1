"""Slope perturbation of the pinned cell and modulus probes of the second example."""

import argparse
import pathlib

from homlab.experiments import stability_experiment
from homlab.field import builtin
from homlab.homogenize import modulus_probe


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("outdir", type=pathlib.Path)
    args = ap.parse_args()
    args.outdir.mkdir(parents=True, exist_ok=True)
    ex2 = builtin("example2")
    rep = stability_experiment(ex2, (1e-2, 1e-4, 1e-6))
    rep.to_csv(args.outdir / "stability.csv")
    print(f"xi_bar={rep.xi_bar:.2f} holds={rep.holds}")
    for r in rep.rows:
        print(f"gamma={r.gamma:.0e} lambda={r.lambda_gamma:.6f} log_ratio={r.log_ratio:.4f}")
    for r in modulus_probe(ex2, -1e-2, 0.0, [(-1e-4, 0.0), (-1e-6, 0.0)]):
        print(f"dv={r.dv:.0e} lhs={r.lhs:.3e} slack={r.slack:.1e} rhs={r.rhs:.2f}")


if __name__ == "__main__":
    main()
