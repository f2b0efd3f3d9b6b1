"""Command-line front end.

Every subcommand reads an optional JSON config (``--config``); flags given on
the command line override keys from the file.  CSV goes to ``--output`` when
given, otherwise to standard output (summary lines then go to stderr).

Exit codes: 0 success, 1 error, 2 a checked inequality failed.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field as dc_field, fields
from typing import Optional

import numpy as np

from . import expr
from .experiments import (
    DEEP_EPS,
    DEFAULT_EPS,
    PreconditionError,
    rate_experiment,
    sharpness_csv,
    sharpness_experiment,
    stability_experiment,
)
from .field import BUILTINS, DEFAULT_U_BOX, ProblemField, builtin, from_expression, validate
from .homogenize import run_scheme
from .integrator import DEFAULT_TOL, ToleranceSpec, solve_oscillatory, write_csv
from .slope import (
    DEFAULT_HORIZON,
    NotSignDefinite,
    effective_field,
    estimate,
    estimate_quadrature,
    estimate_trajectory,
    estimate_window,
)
from .transport import TransportProblem, build_table, lipschitz_probe, solve_transport

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """All settings of one run; ``None`` means "use the command's default"."""

    problem: Optional[str] = None
    params: list = dc_field(default_factory=list)
    f: Optional[str] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    lipschitz_v: Optional[float] = None
    u_box: list = dc_field(default_factory=lambda: list(DEFAULT_U_BOX))
    eps: Optional[list] = None
    T: Optional[float] = None
    T_scaled: bool = False
    C: float = 1.0
    u0: Optional[float] = None
    dt: Optional[float] = None
    steps: Optional[int] = None
    u: Optional[list] = None
    t: Optional[list] = None
    v0: float = 0.0
    horizon: float = DEFAULT_HORIZON
    method: str = "trajectory"
    window: Optional[float] = None
    stride: float = 1.0
    gamma: Optional[list] = None
    delta: float = 1.0
    V0: str = "x1"
    lip_V0: float = 1.0
    x1: list = dc_field(default_factory=lambda: [0.0, 1.0, 21])
    x2: list = dc_field(default_factory=lambda: [0.0, 1.0, 21])
    times: list = dc_field(default_factory=lambda: [0.25, 0.5, 1.0])
    table_nodes: int = 41
    h: Optional[float] = None
    rel_tol: float = DEFAULT_TOL.rel_tol
    abs_tol: float = DEFAULT_TOL.abs_tol
    samples: int = 10_000
    rng_seed: int = 0
    jobs: int = 1
    deep: bool = False
    output: Optional[str] = None

    @property
    def tol(self) -> ToleranceSpec:
        return ToleranceSpec(rel_tol=self.rel_tol, abs_tol=self.abs_tol)

    def check(self, where="config"):
        for name in ("eps", "gamma"):
            vals = getattr(self, name)
            if vals is not None and any(not 0 < x < 1 for x in vals):
                raise ConfigError(f"{where}: every value of {name!r} must lie in (0, 1)")
        for name in ("alpha", "beta", "lipschitz_v"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{where}: {name!r} must be non-negative")
        if self.jobs < 1:
            raise ConfigError(f"{where}: 'jobs' must be at least 1")
        if self.f is not None:
            try:
                expr.parse(self.f, ("v", "tau", "u", "t"))
            except expr.ParseError as exc:
                raise ConfigError(f"{where}: key 'f': offset {exc.offset}: {exc}") from exc
        try:
            expr.parse(self.V0, ("x1", "x2"))
        except expr.ParseError as exc:
            raise ConfigError(f"{where}: key 'V0': offset {exc.offset}: {exc}") from exc


_FIELD_NAMES = {f.name for f in fields(RunConfig)}


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: offset {exc.pos} (line {exc.lineno}, column {exc.colno}): {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: offset 0: top level must be a JSON object")
    unknown = sorted(set(data) - _FIELD_NAMES)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    return data


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _grid(text):
    vals = _floats(text)
    if len(vals) != 3 or vals[2] != int(vals[2]) or vals[2] < 1:
        raise argparse.ArgumentTypeError(f"expected lo,hi,n, got {text!r}")
    return [vals[0], vals[1], int(vals[2])]


def _add_common(p):
    g = p.add_argument_group("problem")
    g.add_argument("--config", help="JSON config file; flags override its keys")
    g.add_argument("--problem", help=f"built-in field: {', '.join(sorted(BUILTINS))}")
    g.add_argument("--params", type=_floats, help="built-in parameters, comma separated")
    g.add_argument("--f", help="field expression in v, tau, u, t (needs --alpha, --beta, --lipschitz-v)")
    g.add_argument("--alpha", type=float, help="declared Lipschitz constant of f")
    g.add_argument("--beta", type=float, help="declared bound of |f|")
    g.add_argument("--lipschitz-v", dest="lipschitz_v", type=float, help="declared Lipschitz constant in v")
    g.add_argument("--u-box", dest="u_box", type=_floats, help="lo,hi of the u interval for the bounds")
    o = p.add_argument_group("run")
    o.add_argument("--rel-tol", dest="rel_tol", type=float, help="integrator relative tolerance")
    o.add_argument("--abs-tol", dest="abs_tol", type=float, help="integrator absolute tolerance")
    o.add_argument("--jobs", type=int, help="worker processes")
    o.add_argument("--output", "-o", help="CSV output path (default: standard output)")
    o.add_argument("--seedless", action="store_true", help="deterministic mode (always on; accepted for scripts)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homlab", description="Periodic homogenization laboratory.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("validate", help="sample the structural assumptions of a field")
    _add_common(p)
    p.add_argument("--samples", type=int, help="number of sample points (>= 100)")
    p.add_argument("--rng-seed", dest="rng_seed", type=int, help="seed of the sampler")

    p = sub.add_parser("solve-eps", help="solve the oscillatory ODE for one epsilon")
    _add_common(p)
    p.add_argument("--eps", type=_floats, help="epsilon (one value)")
    p.add_argument("--u0", type=float, help="initial value")
    p.add_argument("--T", type=float, help="final time")

    p = sub.add_parser("slope", help="effective slope at (u, t), or a table over lists of u and t")
    _add_common(p)
    p.add_argument("--u", type=_floats, help="frozen u (comma-separated list builds a table)")
    p.add_argument("--t", type=_floats, help="frozen t (comma-separated list builds a table)")
    p.add_argument("--horizon", type=float, help="cell horizon (default 1e4)")
    p.add_argument("--method", choices=["trajectory", "quadrature", "window", "auto"], help="estimator")
    p.add_argument("--v0", type=float, help="cell initial value")
    p.add_argument("--window", type=float, help="window length for --method window")
    p.add_argument("--stride", type=float, help="window stride for --method window")

    p = sub.add_parser("homogenize", help="run the discrete homogenized scheme")
    _add_common(p)
    p.add_argument("--u0", type=float, help="initial value")
    p.add_argument("--dt", type=float, help="time step")
    p.add_argument("--steps", type=int, help="number of steps")
    p.add_argument("--T", type=float, help="final time (sets --steps from --dt)")
    p.add_argument("--horizon", type=float, help="cell horizon for trajectory slopes")

    p = sub.add_parser("rate", help="sup-norm error of u^eps against u^0 over an epsilon sweep")
    _add_common(p)
    p.add_argument("--u0", type=float, help="initial value")
    p.add_argument("--T", type=float, help="final time")
    p.add_argument("--T-scaled", dest="T_scaled", action="store_true", help="use T * eps |log eps| per epsilon")
    p.add_argument("--C", type=float, help="constant in T >= C eps |log eps| and dt = C eps |log eps|")
    p.add_argument("--eps", type=_floats, help="epsilon list (default 1e-2..1e-5)")
    p.add_argument("--deep", action="store_true", help="add 1e-6 to the default epsilon list")

    p = sub.add_parser("sharpness", help="gap of the third example at t = delta eps |log eps|")
    _add_common(p)
    p.add_argument("--delta", type=float, help="delta > 0")
    p.add_argument("--eps", type=_floats, help="epsilon list")

    p = sub.add_parser("stability", help="slope perturbation g + gamma against the stability bound")
    _add_common(p)
    p.add_argument("--gamma", type=_floats, help="gamma list (default 1e-2,1e-4,1e-6)")
    p.add_argument("--u", type=_floats, help="frozen u (default 0)")
    p.add_argument("--t", type=_floats, help="frozen t (default 0)")
    p.add_argument("--horizon", type=float, help="cell horizon for trajectory slopes")

    p = sub.add_parser("transport", help="oscillatory vs homogenized transport by characteristics")
    _add_common(p)
    p.add_argument("--eps", type=_floats, help="epsilon (one value)")
    p.add_argument("--V0", help="initial data expression in x1, x2 (default x1)")
    p.add_argument("--lip-V0", dest="lip_V0", type=float, help="declared Lipschitz constant of V0")
    p.add_argument("--x1", type=_grid, help="lo,hi,n lattice in x1")
    p.add_argument("--x2", type=_grid, help="lo,hi,n lattice in x2")
    p.add_argument("--times", type=_floats, help="sample times")
    p.add_argument("--table-nodes", dest="table_nodes", type=int, help="slope table nodes per axis")
    p.add_argument("--h", type=float, help="also report the x2 Lipschitz probe with this step")
    return parser


_CLI_ONLY = {"command", "config", "seedless"}


def make_config(args: argparse.Namespace) -> RunConfig:
    data = load_config(args.config) if args.config else {}
    where = args.config or "config"
    for key, value in vars(args).items():
        if key in _CLI_ONLY or value is None or value is False:
            continue
        data[key] = value
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    for key in ("u", "t", "eps", "gamma", "params"):
        v = getattr(cfg, key)
        if v is not None and not isinstance(v, list):
            setattr(cfg, key, [v])
    cfg.check(where)
    return cfg


def make_field(cfg: RunConfig, default: Optional[str] = None) -> ProblemField:
    if cfg.f is not None:
        missing = [k for k in ("alpha", "beta", "lipschitz_v") if getattr(cfg, k) is None]
        if missing:
            raise ConfigError(f"expression fields need declared {missing}")
        return from_expression(cfg.f, alpha=cfg.alpha, beta=cfg.beta, lipschitz_v=cfg.lipschitz_v, u_box=cfg.u_box)
    name = cfg.problem or default
    if name is None:
        raise ConfigError("no problem given: use --problem NAME or --f EXPR")
    return builtin(name, cfg.params, u_box=cfg.u_box)


class _Out:
    """CSV sink plus a summary stream that avoids mixing with CSV on stdout."""

    def __init__(self, cfg):
        self.path = cfg.output
        self.summary = sys.stdout if self.path else sys.stderr

    def csv(self, writer):
        if self.path:
            writer(self.path)
        else:
            writer(sys.stdout)

    def say(self, line):
        print(line, file=self.summary)


def _one(values, name, default=None):
    if values is None:
        if default is None:
            raise ConfigError(f"missing {name!r}")
        return default
    if len(values) != 1:
        raise ConfigError(f"{name!r} takes exactly one value here")
    return values[0]


def _need(value, name):
    if value is None:
        raise ConfigError(f"missing {name!r}")
    return value


# -- commands --------------------------------------------------------------


def cmd_validate(cfg, out):
    fld = make_field(cfg)
    if cfg.samples < 100:
        raise ConfigError("'samples' must be at least 100")
    rep = validate(fld, cfg.samples, seed=cfg.rng_seed)
    ok = rep.consistent_with(fld)
    header = [
        "sampled_beta", "declared_beta", "sampled_alpha", "declared_alpha",
        "periodicity_defect", "monotonicity_defect", "sample_count", "consistent",
    ]
    row = (
        rep.sampled_beta, fld.beta, rep.sampled_alpha, fld.alpha,
        rep.periodicity_defect, rep.monotonicity_defect, rep.sample_count, ok,
    )
    out.csv(lambda dst: write_csv(dst, header, [row]))
    out.say(
        f"periodicity_defect={rep.periodicity_defect:.3e} monotonicity_defect={rep.monotonicity_defect:.3e} "
        f"sampled_beta={rep.sampled_beta:.6g} sampled_alpha={rep.sampled_alpha:.6g} consistent={str(ok).lower()}"
    )
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_solve_eps(cfg, out):
    fld = make_field(cfg)
    eps = _one(cfg.eps, "eps")
    traj = solve_oscillatory(fld, eps, _need(cfg.u0, "u0"), _need(cfg.T, "T"), cfg.tol)
    out.csv(traj.to_csv)
    out.say(f"u(T)={traj.final!r} steps={len(traj.t) - 1} rhs_evals={traj.rhs_evals}")
    return EXIT_OK


def cmd_slope(cfg, out):
    fld = make_field(cfg)
    us = cfg.u if cfg.u is not None else [0.0]
    ts = cfg.t if cfg.t is not None else [0.0]
    if len(us) > 1 or len(ts) > 1:
        table = effective_field(fld, sorted(us), sorted(ts), cfg.horizon, cfg.tol, cfg.jobs)
        out.csv(table.to_csv)
        excess = table.monotonicity_excess()
        out.say(f"nodes={len(us) * len(ts)} max_radius={table.max_radius:.3e} monotonicity_excess={excess:.3e}")
        return EXIT_OK if excess <= 0 else EXIT_VIOLATION
    u, t = us[0], ts[0]
    status = EXIT_OK
    if cfg.method == "window":
        total = cfg.horizon
        window = cfg.window if cfg.window is not None else total / 20
        lo, hi = estimate_window(fld, u, t, total, window, cfg.stride, cfg.tol, cfg.v0)
        rows = [(u, t, lo, float("nan"), "window"), (u, t, hi, float("nan"), "window")]
        out.csv(lambda dst: write_csv(dst, ["u", "t", "lambda", "radius", "method"], rows))
        out.say(f"lambda_minus={lo:.6g} lambda_plus={hi:.6g} width={hi - lo:.3e} bound={2 * fld.xi / window:.3e}")
        return EXIT_OK if hi - lo <= 2 * fld.xi / window + 20 * cfg.tol.unit else EXIT_VIOLATION
    if cfg.method == "quadrature":
        est = estimate_quadrature(fld, u, t)
    elif cfg.method == "auto":
        est = estimate(fld, u, t, cfg.horizon, cfg.tol)
    else:
        est = estimate_trajectory(fld, u, t, cfg.horizon, cfg.tol, cfg.v0)
    rows = [(u, t, est.value, est.certified_radius, est.method)]
    out.say(f"lambda={est.value:.6g} radius={est.certified_radius:.1e} method={est.method}")
    if est.method == "trajectory" and fld.tau_independent:
        try:
            q = estimate_quadrature(fld, u, t)
        except NotSignDefinite as exc:
            out.say(f"quadrature cross-check skipped: {exc}")
        else:
            agree = abs(q.value - est.value) <= q.certified_radius + est.certified_radius
            out.say(f"quadrature lambda={q.value:.10g} radius={q.certified_radius:.1e} agree={str(agree).lower()}")
            rows.append((u, t, q.value, q.certified_radius, q.method))
            status = EXIT_OK if agree else EXIT_VIOLATION
    out.csv(lambda dst: write_csv(dst, ["u", "t", "lambda", "radius", "method"], rows))
    return status


def cmd_homogenize(cfg, out):
    fld = make_field(cfg)
    dt = _need(cfg.dt, "dt")
    if cfg.steps is not None:
        steps = cfg.steps
    elif cfg.T is not None:
        steps = max(1, math.ceil(cfg.T / dt - 1e-9))
    else:
        raise ConfigError("give 'steps' or 'T'")
    path = run_scheme(fld, _need(cfg.u0, "u0"), dt, steps, "direct", cfg.horizon)
    out.csv(path.to_csv)
    line = f"v(T)={float(path.values[-1])!r} T={path.t_end!r} uncertainty={path.uncertainty[-1]:.3e}"
    if path.analytic is not None:
        line += f" analytic={float(path.analytic(path.t_end))!r}"
    out.say(line)
    return EXIT_OK


def cmd_rate(cfg, out):
    fld = make_field(cfg)
    eps = cfg.eps if cfg.eps is not None else list(DEEP_EPS if cfg.deep else DEFAULT_EPS)
    T = _need(cfg.T, "T")
    u0 = _need(cfg.u0, "u0")
    if cfg.T_scaled:
        T_of = lambda e: T * e * abs(math.log(e))  # noqa: E731
    else:
        T_of = T
    rep = rate_experiment(fld, u0, T_of, eps, cfg.C, cfg.tol, cfg.jobs)
    out.csv(rep.to_csv)
    growth = rep.growth_factors()
    out.say(
        f"fitted_c={rep.fitted_c!r} analytic_reference={str(rep.analytic_reference).lower()} "
        f"max_decade_growth={max(growth) if growth else float('nan'):.3g}"
    )
    return EXIT_OK if rep.bounded else EXIT_VIOLATION


def cmd_sharpness(cfg, out):
    eps = cfg.eps if cfg.eps is not None else [1e-3, 1e-4, 1e-5]
    rows = sharpness_experiment(cfg.delta, eps)
    out.csv(lambda dst: sharpness_csv(rows, dst))
    for r in rows:
        out.say(f"eps={r.epsilon:g} t={r.t:.6e} gap={r.gap:.10e} predicted={r.predicted:.6e} ratio={r.ratio:.8f}")
    return EXIT_OK if all(r.within_bound for r in rows) else EXIT_VIOLATION


def cmd_stability(cfg, out):
    fld = make_field(cfg, default="example2")
    gammas = cfg.gamma if cfg.gamma is not None else [1e-2, 1e-4, 1e-6]
    rep = stability_experiment(fld, gammas, cfg.horizon, _one(cfg.u, "u", 0.0), _one(cfg.t, "t", 0.0), cfg.tol)
    out.csv(rep.to_csv)
    out.say(f"xi_bar={rep.xi_bar!r} holds={str(rep.holds).lower()}")
    return EXIT_OK if rep.holds else EXIT_VIOLATION


def cmd_transport(cfg, out):
    fld = make_field(cfg)
    eps = _one(cfg.eps, "eps")
    x1 = np.linspace(cfg.x1[0], cfg.x1[1], int(cfg.x1[2]))
    x2 = np.linspace(cfg.x2[0], cfg.x2[1], int(cfg.x2[2]))
    problem = TransportProblem(fld, cfg.V0, cfg.lip_V0, x1, x2, cfg.times, eps, cfg.tol)
    pad = cfg.h or 0.0
    table = build_table(fld, x1, x2, float(problem.times[-1]), cfg.table_nodes, jobs=cfg.jobs, x2_pad=pad)
    sol = solve_transport(problem, table)
    out.csv(sol.to_csv)
    line = f"sup_error={sol.sup_error!r} char_radius={sol.char_radius:.3e}"
    status = EXIT_OK
    if fld.u_independent and fld.t_independent:
        bound = fld.xi * cfg.lip_V0 * eps
        slack = cfg.lip_V0 * (sol.char_radius + 10 * cfg.tol.unit)
        line += f" bound={bound!r} slack={slack:.3e}"
        if sol.sup_error > bound + slack:
            status = EXIT_VIOLATION
    if cfg.h is not None:
        q = lipschitz_probe(problem, table, cfg.h)
        line += f" x2_quotient={q:.6g} x2_bound={2 * fld.beta:.6g}"
    out.say(line)
    return status


COMMANDS = {
    "validate": cmd_validate,
    "solve-eps": cmd_solve_eps,
    "slope": cmd_slope,
    "homogenize": cmd_homogenize,
    "rate": cmd_rate,
    "sharpness": cmd_sharpness,
    "stability": cmd_stability,
    "transport": cmd_transport,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = make_config(args)
        return COMMANDS[args.command](cfg, _Out(cfg))
    except (ConfigError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # module errors are reported verbatim
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
