"""Linear transport ``V_t = f(x1/eps, x2/eps, x1, x2) V_x1 - V_x2`` by characteristics.

The backward characteristic through ``(t, x)`` has ``X2(tau) = x2 - tau`` and
``X1' = f(X1/eps, (x2 - tau)/eps, X1, x2 - tau)``; then
``V(t, x) = V0(X1(t), x2 - t)``.  The homogenized solution uses the same
construction with ``f`` replaced by the effective slope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from . import expr
from .field import ProblemField
from .integrator import DEFAULT_TOL, ToleranceSpec, frac, integrate_phase, integrate_phase_batch, write_csv
from .slope import DEFAULT_HORIZON, SlopeTable, TableCoverageError, effective_field

__all__ = [
    "TransportProblem",
    "TransportSolution",
    "TransportError",
    "V0_VARIABLES",
    "TABLE_NODES",
    "characteristic_eps",
    "characteristics_eps",
    "characteristic_hom",
    "characteristics_hom",
    "build_table",
    "solve_transport",
    "flow_map",
    "lipschitz_probe",
]

V0_VARIABLES = ("x1", "x2")
TABLE_NODES = 41
EULER_STEP = 1e-3


class TransportError(RuntimeError):
    pass


def _strictly_increasing(a, name):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.ndim != 1 or a.size == 0 or np.any(np.diff(a) <= 0):
        raise ValueError(f"{name} must be non-empty and strictly increasing")
    return a


@dataclass(frozen=True, eq=False)
class TransportProblem:
    """Initial data ``V0(x1, x2)`` (expression text or vectorized callable) on a lattice."""

    field: ProblemField
    V0: Union[str, Callable]
    lip_V0: float
    x1_grid: np.ndarray
    x2_grid: np.ndarray
    times: np.ndarray
    epsilon: float
    tol: ToleranceSpec = DEFAULT_TOL

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("x1_grid", _strictly_increasing(self.x1_grid, "x1_grid"))
        set_("x2_grid", _strictly_increasing(self.x2_grid, "x2_grid"))
        times = _strictly_increasing(self.times, "times")
        if times[0] < 0:
            raise ValueError("times must be non-negative")
        set_("times", times)
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if isinstance(self.V0, str):
            ast = expr.parse(self.V0, V0_VARIABLES)
            set_("_v0", expr.compile_array(ast, V0_VARIABLES))
        else:
            set_("_v0", self.V0)
        q = self.sampled_lipschitz()
        if q > self.lip_V0 * (1 + 1e-9) + 1e-12:
            raise ValueError(f"declared lip_V0={self.lip_V0} is below a sampled quotient {q:.6g}")

    def v0(self, x1, x2):
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        return np.asarray(self._v0(x1, x2), dtype=float) * np.ones_like(x1)

    def sampled_lipschitz(self) -> float:
        """Largest difference quotient of ``V0`` between lattice neighbours."""
        X1, X2 = np.meshgrid(self.x1_grid, self.x2_grid, indexing="ij")
        V = self.v0(X1, X2)
        q = 0.0
        if self.x1_grid.size > 1:
            q = max(q, float(np.max(np.abs(np.diff(V, axis=0)) / np.diff(self.x1_grid)[:, None])))
        if self.x2_grid.size > 1:
            q = max(q, float(np.max(np.abs(np.diff(V, axis=1)) / np.diff(self.x2_grid)[None, :])))
        return q


@dataclass(frozen=True, eq=False)
class TransportSolution:
    """``values_*[k, i, j]`` at ``(times[k], x1_grid[i], x2_grid[j])``."""

    times: np.ndarray
    x1_grid: np.ndarray
    x2_grid: np.ndarray
    values_eps: np.ndarray
    values_hom: np.ndarray
    char_radius: float
    table: Optional[SlopeTable] = None

    @property
    def sup_error(self) -> float:
        return float(np.max(np.abs(self.values_eps - self.values_hom)))

    def rows(self):
        for k, t in enumerate(self.times.tolist()):
            for i, x1 in enumerate(self.x1_grid.tolist()):
                for j, x2 in enumerate(self.x2_grid.tolist()):
                    a, b = float(self.values_eps[k, i, j]), float(self.values_hom[k, i, j])
                    yield (t, x1, x2, a, b, abs(a - b))

    def to_csv(self, path_or_file):
        write_csv(path_or_file, ["t", "x1", "x2", "V_eps", "V_hom", "abs_err"], self.rows())


# -- oscillatory characteristics ---------------------------------------------


def characteristic_eps(problem: TransportProblem, x, t: float) -> float:
    """``X1(t)`` of the oscillatory backward characteristic through ``x``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    x1, x2 = float(x[0]), float(x[1])
    if t == 0:
        return x1
    eps = problem.epsilon
    f = problem.field.evaluate
    c = frac(x2 / eps)

    def F(theta, phi, y, s):
        return f(theta, frac(c - phi), y, x2 - s)

    return integrate_phase(F, eps, x1, t, tol=problem.tol).final


def characteristics_eps(problem: TransportProblem, x1, x2, times) -> np.ndarray:
    """Batched ``X1`` at every time; result has shape ``(len(times), n)``.

    When ``f`` ignores ``tau`` and ``t`` the characteristic does not see
    ``x2`` and only distinct ``x1`` are integrated.
    """
    x1, x2 = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
    x1, x2 = x1.ravel(), x2.ravel()
    fld = problem.field
    eps = problem.epsilon
    if fld.tau_independent and fld.t_independent:
        keys, inverse = np.unique(x1, return_inverse=True)
        k2 = np.zeros_like(keys)
    else:
        pairs, inverse = np.unique(np.stack([x1, x2], axis=1), axis=0, return_inverse=True)
        keys, k2 = pairs[:, 0], pairs[:, 1]
    inverse = inverse.ravel()
    fa = fld.evaluate_array
    c = frac(k2 / eps)

    def F(theta, phi, y, s):
        return fa(theta, frac(c - phi), y, k2 - s)

    times = np.asarray(times, dtype=float)
    res = integrate_phase_batch(F, eps, keys, times, tol=problem.tol)
    return res.values[:, inverse]


# -- homogenized characteristics ---------------------------------------------


def characteristics_hom(table: SlopeTable, x1, x2, t: float):
    """Forward Euler for ``X' = fbar(X, x2 - tau)`` with ``dt = min(1e-3, t/100)``.

    Returns ``(X(t), radius)`` where ``radius`` accumulates the table radii
    times the step.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.broadcast_to(np.asarray(x2, dtype=float), x1.shape)
    if t < 0:
        raise ValueError("t must be non-negative")
    X = x1.copy()
    radius = np.zeros_like(X)
    if t == 0:
        return X, radius
    dt = min(EULER_STEP, t / 100)
    steps = math.ceil(t / dt - 1e-9)
    dt = t / steps
    for k in range(steps):
        s = x2 - k * dt
        lam = table(X, s)
        radius = radius + table.radius_at(X, s) * dt
        X = X + lam * dt
    return X, radius


def characteristic_hom(problem: TransportProblem, table: SlopeTable, x, t: float):
    """Scalar form of :func:`characteristics_hom`: ``(X1^0(t), radius)``."""
    X, r = characteristics_hom(table, np.array([float(x[0])]), np.array([float(x[1])]), t)
    return float(X[0]), float(r[0])


def build_table(
    field: ProblemField,
    x1_range,
    x2_range,
    t_max: float,
    nodes: int = TABLE_NODES,
    horizon: float = DEFAULT_HORIZON,
    tol: ToleranceSpec = DEFAULT_TOL,
    jobs: int = 1,
    x2_pad: float = 0.0,
) -> SlopeTable:
    """Slope table over the box the characteristics can reach.

    The backward characteristic sees the fast time ``(x2 - tau)/eps``, which
    runs backwards, so its cell problem is that of ``f(v, -tau, u, t)``.  The
    table holds the slopes of that reversed cell; they coincide with the
    slopes of ``f`` whenever ``f`` ignores ``tau``.

    ``u`` spans ``x1 -/+ beta t_max`` clipped to ``u_box``; the time axis spans
    ``[min x2 - t_max, max x2 + x2_pad]``.  An axis the field ignores gets one
    node and the other axis receives the whole ``nodes**2`` budget.
    """
    lo1, hi1 = float(np.min(x1_range)), float(np.max(x1_range))
    lo2, hi2 = float(np.min(x2_range)), float(np.max(x2_range))
    ulo = max(field.u_box[0], lo1 - field.beta * t_max)
    uhi = min(field.u_box[1], hi1 + field.beta * t_max)
    if not ulo < uhi:
        raise TableCoverageError(f"x1 range [{lo1}, {hi1}] lies outside u_box {field.u_box}")
    tlo, thi = lo2 - t_max, hi2 + x2_pad
    nu = nt = nodes
    if field.u_independent and field.t_independent:
        nu = nt = 1
    elif field.t_independent:
        nu, nt = nodes * nodes, 1
    elif field.u_independent:
        nu, nt = 1, nodes * nodes
    u_grid = np.array([0.5 * (ulo + uhi)]) if nu == 1 else np.linspace(ulo, uhi, nu)
    t_grid = np.array([0.5 * (tlo + thi)]) if nt == 1 or tlo == thi else np.linspace(tlo, thi, nt)
    return effective_field(field.time_reversed(), u_grid, t_grid, horizon, tol, jobs)


def _table_for(problem, table, jobs, x2_pad=0.0):
    if table is not None:
        return table
    return build_table(
        problem.field,
        problem.x1_grid,
        problem.x2_grid,
        float(problem.times[-1]),
        jobs=jobs,
        x2_pad=x2_pad,
    )


def flow_map(table: SlopeTable, x1_grid, x2_grid, t: float):
    """``Y(t, x1, x2) = X1^0(t)`` on the lattice, shape ``(len(x1), len(x2))``."""
    X1, X2 = np.meshgrid(np.asarray(x1_grid, float), np.asarray(x2_grid, float), indexing="ij")
    Y, _ = characteristics_hom(table, X1, X2, t)
    return Y


def solve_transport(
    problem: TransportProblem,
    table: Optional[SlopeTable] = None,
    jobs: int = 1,
) -> TransportSolution:
    """Oscillatory and homogenized solutions on the lattice at every sample time."""
    table = _table_for(problem, table, jobs)
    X1, X2 = np.meshgrid(problem.x1_grid, problem.x2_grid, indexing="ij")
    shape = (problem.times.size,) + X1.shape
    try:
        Xeps = characteristics_eps(problem, X1, X2, problem.times).reshape(shape)
    except Exception as exc:
        raise TransportError(f"oscillatory characteristics failed: {exc}") from exc
    Veps = np.empty(shape)
    Vhom = np.empty(shape)
    radius = 0.0
    for k, t in enumerate(problem.times.tolist()):
        Xhom, r = characteristics_hom(table, X1, X2, t)
        radius = max(radius, float(np.max(r)))
        Veps[k] = problem.v0(Xeps[k], X2 - t)
        Vhom[k] = problem.v0(Xhom, X2 - t)
    return TransportSolution(
        times=problem.times,
        x1_grid=problem.x1_grid,
        x2_grid=problem.x2_grid,
        values_eps=Veps,
        values_hom=Vhom,
        char_radius=radius,
        table=table,
    )


def lipschitz_probe(problem: TransportProblem, table: SlopeTable, h: float) -> float:
    """Largest ``|Y(t, x1, x2 + h) - Y(t, x1, x2)| / h`` over the lattice and sample times."""
    if not h > 0:
        raise ValueError("h must be positive")
    q = 0.0
    for t in problem.times.tolist():
        a = flow_map(table, problem.x1_grid, problem.x2_grid, t)
        b = flow_map(table, problem.x1_grid, problem.x2_grid + h, t)
        q = max(q, float(np.max(np.abs(b - a)) / h))
    return q
