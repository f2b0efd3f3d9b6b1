"""Convergence-rate, sharpness and stability experiments."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from .field import ProblemField, builtin
from .homogenize import analytic_homogenized, reference_solution
from .integrator import DEFAULT_TOL, ToleranceSpec, solve_oscillatory, write_csv
from .slope import DEFAULT_HORIZON, estimate

__all__ = [
    "PreconditionError",
    "ErrorRow",
    "ErrorReport",
    "SharpnessRow",
    "StabilityRow",
    "StabilityReport",
    "SHARP_TOL",
    "DEFAULT_EPS",
    "DEEP_EPS",
    "rate_experiment",
    "sharpness_experiment",
    "stability_experiment",
    "sharpness_csv",
]

DEFAULT_EPS = (1e-2, 1e-3, 1e-4, 1e-5)
DEEP_EPS = DEFAULT_EPS + (1e-6,)
GRID_POINTS = 1001
SHARP_TOL = ToleranceSpec(rel_tol=1e-12, abs_tol=1e-14)


class PreconditionError(ValueError):
    pass


# -- rate law --------------------------------------------------------------


@dataclass(frozen=True)
class ErrorRow:
    epsilon: float
    T: float
    sup_error: float
    product: float
    dt_used: float
    slack: float


@dataclass(frozen=True)
class ErrorReport:
    rows: tuple
    analytic_reference: bool
    C: float = 1.0

    @property
    def fitted_c(self) -> float:
        """Largest ``E |log eps| / T`` over the sweep."""
        return max(r.product for r in self.rows)

    def growth_factors(self):
        """Ratio of consecutive products, scaled to one decade of ``eps``."""
        out = []
        for a, b in zip(self.rows, self.rows[1:]):
            decades = math.log10(a.epsilon / b.epsilon)
            out.append((b.product / a.product) ** (1.0 / decades) if a.product > 0 else math.inf)
        return out

    @property
    def bounded(self) -> bool:
        """Products never grow more than 2x per decade of ``eps``."""
        return all(g <= 2.0 for g in self.growth_factors())

    def to_csv(self, path_or_file):
        write_csv(
            path_or_file,
            ["epsilon", "T", "sup_error", "product", "dt_used", "slack"],
            ((r.epsilon, r.T, r.sup_error, r.product, r.dt_used, r.slack) for r in self.rows),
        )


def _rate_row(field, u0, T, eps, C, tol):
    dt = C * eps * abs(math.log(eps))
    traj = solve_oscillatory(field, eps, u0, T, tol)
    grid = np.linspace(0.0, T, GRID_POINTS)
    exact = analytic_homogenized(field, u0)
    if exact is not None:
        times = np.union1d(grid, traj.t)
        ref = exact(times)
    else:
        path = reference_solution(field, u0, T, dt / 8, dt)
        times = np.union1d(np.union1d(grid, traj.t), path.times)
        ref = path(times)
    ueps = traj(times)
    err = float(np.max(np.abs(ueps - ref)))
    return ErrorRow(
        epsilon=float(eps),
        T=float(T),
        sup_error=err,
        product=err * abs(math.log(eps)) / T,
        dt_used=dt,
        slack=2.0 * field.beta * T / (GRID_POINTS - 1),
    )


def rate_experiment(
    field: ProblemField,
    u0: float,
    T,
    eps_list: Sequence[float],
    C: float = 1.0,
    tol: ToleranceSpec = DEFAULT_TOL,
    jobs: int = 1,
) -> ErrorReport:
    """Measure ``E(eps) = sup_t |u^eps - u^0|`` over ``[0, T]`` for each ``eps``.

    ``T`` is a number or a callable ``eps -> T``.  The homogenized reference is
    the closed form when known, otherwise the scheme at ``dt/8`` with
    ``dt = C eps |log eps|``.
    """
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    if not eps_list:
        raise ValueError("eps_list is empty")
    if any(not 0 < e < 1 for e in eps_list):
        raise ValueError("every epsilon must lie in (0, 1)")
    Ts = [float(T(e)) if callable(T) else float(T) for e in eps_list]
    bad = [e for e, t in zip(eps_list, Ts) if t < C * e * abs(math.log(e)) * (1 - 1e-12)]
    if bad:
        raise PreconditionError(f"T < C eps |log eps| for eps in {bad}")
    args = [(field, u0, t, e, C, tol) for e, t in zip(eps_list, Ts)]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
            rows = list(pool.map(_rate_row, *zip(*args)))
    else:
        rows = [_rate_row(*a) for a in args]
    return ErrorReport(rows=tuple(rows), analytic_reference=analytic_homogenized(field, u0) is not None, C=C)


# -- sharpness -------------------------------------------------------------


@dataclass(frozen=True)
class SharpnessRow:
    epsilon: float
    t: float
    gap: float
    predicted: float
    ratio: float

    @property
    def within_bound(self) -> bool:
        """The gap lies in ``[0, eps/2]``."""
        return 0.0 <= self.gap <= self.epsilon / 2


def sharpness_experiment(delta: float, eps_list: Sequence[float], tol: ToleranceSpec = SHARP_TOL) -> list:
    """Gap ``u^eps(t) - u^0(t)`` for the third example at ``t = delta eps |log eps|``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    field = builtin("example3")
    rows = []
    for eps in sorted((float(e) for e in eps_list), reverse=True):
        if not 0 < eps < math.exp(-1):
            raise ValueError(f"epsilon={eps} must lie in (0, 1/e)")
        L = abs(math.log(eps))
        t = delta * eps * L
        gap = solve_oscillatory(field, eps, 0.0, t, tol).final + t
        predicted = t / (2 * delta * L)
        rows.append(SharpnessRow(eps, t, gap, predicted, gap / predicted))
    return rows


def sharpness_csv(rows, path_or_file):
    write_csv(
        path_or_file,
        ["epsilon", "t", "gap", "predicted", "ratio"],
        ((r.epsilon, r.t, r.gap, r.predicted, r.ratio) for r in rows),
    )


# -- stability -------------------------------------------------------------


@dataclass(frozen=True)
class StabilityRow:
    gamma: float
    lambda_gamma: float
    lambda_0: float
    delta: float
    bound: float
    radius: float

    @property
    def holds(self) -> bool:
        return self.delta - self.radius <= self.bound

    @property
    def log_ratio(self) -> float:
        """``lambda_gamma |log gamma| / (pi/2)``."""
        return self.lambda_gamma * abs(math.log(self.gamma)) / (math.pi / 2)


@dataclass(frozen=True)
class StabilityReport:
    rows: tuple
    xi_bar: float
    estimates: tuple = dc_field(default=(), repr=False)

    @property
    def holds(self) -> bool:
        return all(r.holds for r in self.rows)

    def to_csv(self, path_or_file):
        write_csv(
            path_or_file,
            ["gamma", "lambda_gamma", "lambda_0", "delta", "bound", "radius"],
            ((r.gamma, r.lambda_gamma, r.lambda_0, r.delta, r.bound, r.radius) for r in self.rows),
        )


def stability_experiment(
    cell_field: ProblemField,
    gamma_list: Sequence[float],
    horizon: float = DEFAULT_HORIZON,
    u: float = 0.0,
    t: float = 0.0,
    tol: ToleranceSpec = DEFAULT_TOL,
) -> StabilityReport:
    """Slopes of ``g`` and ``g + gamma`` frozen at ``(u, t)`` against ``xi_bar / |log gamma|``.

    ``xi_bar`` uses the declared bounds of the unperturbed field.
    """
    gammas = [float(g) for g in gamma_list]
    if any(not 0 < g < 1 for g in gammas):
        raise ValueError("every gamma must lie in (0, 1)")
    base = estimate(cell_field, u, t, horizon, tol)
    xi_bar = cell_field.xi_bar
    rows, ests = [], [base]
    for g in gammas:
        est = estimate(cell_field.shifted(g), u, t, horizon, tol)
        ests.append(est)
        rows.append(
            StabilityRow(
                gamma=g,
                lambda_gamma=est.value,
                lambda_0=base.value,
                delta=abs(est.value - base.value),
                bound=xi_bar / abs(math.log(g)),
                radius=est.certified_radius + base.certified_radius,
            )
        )
    return StabilityReport(rows=tuple(rows), xi_bar=xi_bar, estimates=tuple(ests))
