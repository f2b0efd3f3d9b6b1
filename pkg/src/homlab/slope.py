"""Effective slope of the cell problem ``v' = f(v, tau, u, t)``.

Three estimators:

* ``estimate_trajectory`` integrates one cell trajectory to a horizon ``T``
  and returns ``v(T)/T``; the ergodic bound ``|v(s) - v(s') - lam (s - s')| <= xi``
  with ``xi = 1 + 2 beta`` certifies ``|v(T)/T - lam| <= xi/T``.
* ``estimate_quadrature`` uses ``lam = (int_0^1 dv / f)^-1`` for
  tau-independent fields that keep one sign.
* ``estimate_window`` scans ``(v(s + w) - v(s))/w`` over a finite set of
  ``s`` and returns the smallest and largest quotient.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .field import ProblemField
from .integrator import DEFAULT_TOL, ToleranceSpec, solve_cell, solve_cell_batch, write_csv

__all__ = [
    "SlopeEstimate",
    "SlopeTable",
    "SlopeError",
    "NotSignDefinite",
    "NotTauIndependent",
    "TableCoverageError",
    "DEFAULT_HORIZON",
    "trajectory_radius",
    "estimate_trajectory",
    "estimate_window",
    "estimate_quadrature",
    "estimate",
    "pinned_estimate",
    "DirectSlopes",
    "effective_field",
    "envelope_excess",
]

DEFAULT_HORIZON = 1e4
QUAD_FLOOR = 1e-8
SIGN_SAMPLES = 10_000


class SlopeError(ValueError):
    pass


class NotSignDefinite(SlopeError):
    """``has_zero`` is set when ``f`` was seen to vanish or change sign on the cell."""

    def __init__(self, message, has_zero=False):
        super().__init__(message)
        self.has_zero = has_zero


class NotTauIndependent(SlopeError):
    pass


class TableCoverageError(SlopeError):
    pass


@dataclass(frozen=True)
class SlopeEstimate:
    value: float
    certified_radius: float
    horizon: float
    method: str
    xi: float
    certified: bool

    @property
    def interval(self):
        return (self.value - self.certified_radius, self.value + self.certified_radius)

    def contains(self, x: float) -> bool:
        return abs(x - self.value) <= self.certified_radius


def trajectory_radius(xi: float, horizon: float, tol: ToleranceSpec = DEFAULT_TOL) -> float:
    """``xi/T`` plus the integrator slack ``10 tol (1 + T)`` converted to slope units."""
    return xi / horizon + 10.0 * tol.unit * (1.0 + horizon) / horizon


def estimate_trajectory(
    field: ProblemField,
    u: float,
    t: float,
    horizon: float = DEFAULT_HORIZON,
    tol: ToleranceSpec = DEFAULT_TOL,
    v0: float = 0.0,
) -> SlopeEstimate:
    if horizon < 10:
        raise ValueError("horizon must be at least 10")
    traj = solve_cell(field, u, t, v0, horizon, tol)
    return SlopeEstimate(
        value=(traj.final - v0) / horizon,
        certified_radius=trajectory_radius(field.xi, horizon, tol),
        horizon=float(horizon),
        method="trajectory",
        xi=field.xi,
        certified=field.certified,
    )


def estimate_window(
    field: ProblemField,
    u: float,
    t: float,
    total: float,
    window: float,
    stride: float,
    tol: ToleranceSpec = DEFAULT_TOL,
    v0: float = 0.0,
):
    """Return ``(lambda_minus, lambda_plus)``, the extreme window quotients."""
    if not 0 < window <= total / 2:
        raise ValueError("window must lie in (0, total/2]")
    if stride <= 0:
        raise ValueError("stride must be positive")
    traj = solve_cell(field, u, t, v0, total, tol)
    starts = np.arange(0.0, total - window + 0.5 * stride, stride)
    starts = starts[starts + window <= total * (1 + 1e-12)]
    ends = np.minimum(starts + window, total)
    q = (traj(ends) - traj(starts)) / window
    return float(np.min(q)), float(np.max(q))


def _sign_scan(f_of_v, samples=SIGN_SAMPLES):
    """Sample ``f`` on ``[0,1)`` and refine the smallest local minima of ``|f|``.

    Returns ``(sign, min_abs, minimizers)``; ``sign`` is 0 when ``f`` changes
    sign on the sample grid.
    """
    grid = np.arange(samples) / samples
    vals = np.asarray(f_of_v(grid), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise SlopeError("non-finite field values on the cell")
    if np.all(vals > 0):
        sign = 1
    elif np.all(vals < 0):
        sign = -1
    else:
        return 0, 0.0, []
    a = np.abs(vals)
    is_min = (a <= np.roll(a, 1)) & (a <= np.roll(a, -1))
    candidates = np.flatnonzero(is_min)
    candidates = candidates[np.argsort(a[candidates])][:16]
    step = 1.0 / samples
    best = float(a.min())
    minimizers = []

    def absf(x):
        return abs(float(f_of_v(np.array([x]))[0]))

    for i in candidates:
        lo, hi = grid[i] - step, grid[i] + step
        res = optimize.minimize_scalar(absf, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
        x, fx = float(res.x), float(res.fun)
        if fx > a[i]:
            x, fx = float(grid[i]), float(a[i])
        best = min(best, fx)
        minimizers.append(x % 1.0)
    return sign, best, minimizers


def estimate_quadrature(
    field: ProblemField,
    u: float,
    t: float,
    quad_tol: float = 1e-12,
    quad_floor: float = QUAD_FLOOR,
) -> SlopeEstimate:
    """``lam = 1 / int_0^1 dv / f(v, 0, u, t)`` for one-signed, tau-independent ``f``."""
    if not field.tau_independent:
        raise NotTauIndependent(f"{field.name} depends on tau")
    fa = field.evaluate_array

    def f_of_v(v):
        return fa(v, 0.0, u, t)

    sign, min_abs, minimizers = _sign_scan(f_of_v)
    if sign == 0:
        raise NotSignDefinite(f"f vanishes on the cell at (u, t) = ({u}, {t})", has_zero=True)
    if min_abs <= quad_floor:
        raise NotSignDefinite(f"min |f| = {min_abs:.3e} is below the floor {quad_floor:.1e}")

    f = field.evaluate
    points = sorted({p for p in minimizers if 1e-12 < p < 1 - 1e-12})
    value, abserr = integrate.quad(
        lambda v: 1.0 / f(v, 0.0, u, t),
        0.0,
        1.0,
        points=points or None,
        epsabs=0.0,
        epsrel=quad_tol,
        limit=2000,
    )
    lam = 1.0 / value
    radius = abserr / value**2 + 4 * np.finfo(float).eps * abs(lam)
    return SlopeEstimate(
        value=lam,
        certified_radius=float(radius),
        horizon=math.nan,
        method="quadrature",
        xi=field.xi,
        certified=field.certified,
    )


def pinned_estimate(field: ProblemField) -> SlopeEstimate:
    """Slope of an autonomous cell whose ``f`` has a zero.

    Trajectories cannot cross a rest point, so ``|v(T) - v0| <= 1`` and the
    slope is exactly 0.
    """
    return SlopeEstimate(0.0, 0.0, math.nan, "pinned", field.xi, field.certified)


def estimate(
    field: ProblemField,
    u: float,
    t: float,
    horizon: float = DEFAULT_HORIZON,
    tol: ToleranceSpec = DEFAULT_TOL,
) -> SlopeEstimate:
    """Quadrature when admissible, 0 for pinned autonomous cells, else the trajectory estimate."""
    if field.tau_independent:
        try:
            return estimate_quadrature(field, u, t)
        except NotSignDefinite as exc:
            if exc.has_zero:
                return pinned_estimate(field)
    return estimate_trajectory(field, u, t, horizon, tol)


class DirectSlopes:
    """Memoized ``(u, t) -> SlopeEstimate``.

    Coordinates the field does not depend on are dropped from the cache key,
    so a u- and t-independent field costs a single estimate.
    """

    def __init__(self, field: ProblemField, horizon: float = DEFAULT_HORIZON, tol: ToleranceSpec = DEFAULT_TOL):
        self.field = field
        self.horizon = horizon
        self.tol = tol
        self._cache = {}

    def key(self, u, t):
        return (0.0 if self.field.u_independent else float(u), 0.0 if self.field.t_independent else float(t))

    def __call__(self, u: float, t: float) -> SlopeEstimate:
        k = self.key(u, t)
        hit = self._cache.get(k)
        if hit is None:
            hit = self._cache[k] = estimate(self.field, k[0], k[1], self.horizon, self.tol)
        return hit


# -- tables ----------------------------------------------------------------


def _axis_weights(grid, x, free):
    """Index of the left node and the interpolation weight of the right node."""
    if grid.size == 1:
        if not free and np.any(np.abs(x - grid[0]) > 1e-12 * max(1.0, abs(grid[0]))):
            raise TableCoverageError("query off a single-node axis")
        zeros = np.zeros(np.shape(x), dtype=int)
        return zeros, zeros, np.zeros(np.shape(x))
    span = 1e-12 * max(1.0, abs(grid[-1] - grid[0]))
    if np.any(x < grid[0] - span) or np.any(x > grid[-1] + span):
        bad = np.asarray(x)[(x < grid[0] - span) | (x > grid[-1] + span)]
        raise TableCoverageError(
            f"query {float(bad.flat[0]):.6g} outside table range [{grid[0]:.6g}, {grid[-1]:.6g}]"
        )
    i = np.clip(np.searchsorted(grid, x, side="right") - 1, 0, grid.size - 2)
    w = (np.clip(x, grid[0], grid[-1]) - grid[i]) / (grid[i + 1] - grid[i])
    return i, i + 1, w


@dataclass(frozen=True, eq=False)
class SlopeTable:
    """Effective slopes on a ``(u, t)`` grid with bilinear interpolation.

    ``estimates[i][j]`` belongs to ``(u_grid[i], t_grid[j])``.  An axis with a
    single node is constant along that coordinate when ``u_free``/``t_free``
    is set (the field does not depend on it).
    """

    u_grid: np.ndarray
    t_grid: np.ndarray
    estimates: tuple
    u_free: bool = False
    t_free: bool = False

    def __post_init__(self):
        for g in (self.u_grid, self.t_grid):
            if g.ndim != 1 or g.size == 0 or np.any(np.diff(g) <= 0):
                raise ValueError("table grids must be non-empty and strictly increasing")

    @property
    def lam(self) -> np.ndarray:
        return np.array([[e.value for e in row] for row in self.estimates])

    @property
    def radius(self) -> np.ndarray:
        return np.array([[e.certified_radius for e in row] for row in self.estimates])

    @property
    def max_radius(self) -> float:
        return float(self.radius.max())

    def _weights(self, u, t):
        u = np.asarray(u, dtype=float)
        t = np.asarray(t, dtype=float)
        iu0, iu1, wu = _axis_weights(self.u_grid, u, self.u_free)
        it0, it1, wt = _axis_weights(self.t_grid, t, self.t_free)
        return iu0, iu1, wu, it0, it1, wt

    def __call__(self, u, t):
        lam = self._lam
        iu0, iu1, wu, it0, it1, wt = self._weights(u, t)
        out = (
            (1 - wu) * (1 - wt) * lam[iu0, it0]
            + wu * (1 - wt) * lam[iu1, it0]
            + (1 - wu) * wt * lam[iu0, it1]
            + wu * wt * lam[iu1, it1]
        )
        return float(out) if np.ndim(out) == 0 else out

    def radius_at(self, u, t):
        """Largest certified radius among the nodes used at ``(u, t)``."""
        r = self._radius
        iu0, iu1, wu, it0, it1, wt = self._weights(u, t)
        out = np.maximum.reduce([r[iu0, it0], r[iu1, it0], r[iu0, it1], r[iu1, it1]])
        return float(out) if np.ndim(out) == 0 else out

    @property
    def _lam(self):
        cached = self.__dict__.get("_lam_cache")
        if cached is None:
            cached = self.lam
            object.__setattr__(self, "_lam_cache", cached)
        return cached

    @property
    def _radius(self):
        cached = self.__dict__.get("_radius_cache")
        if cached is None:
            cached = self.radius
            object.__setattr__(self, "_radius_cache", cached)
        return cached

    def monotonicity_excess(self) -> float:
        """Largest ``lam(u2) - lam(u1) - 2 max_radius`` over ``u1 < u2`` (<= 0 when monotone)."""
        lam = self._lam
        if lam.shape[0] < 2:
            return -2 * self.max_radius
        running_min = np.minimum.accumulate(lam, axis=0)
        rises = lam[1:] - running_min[:-1]
        return float(rises.max() - 2 * self.max_radius)

    def rows(self):
        for i, u in enumerate(self.u_grid):
            for j, t in enumerate(self.t_grid):
                e = self.estimates[i][j]
                yield (float(u), float(t), e.value, e.certified_radius, e.method)

    def to_csv(self, path_or_file):
        write_csv(path_or_file, ["u", "t", "lambda", "radius", "method"], self.rows())


BATCH_MIN = 16


def _trajectory_batch(field, keys, horizon, tol):
    if len(keys) < BATCH_MIN:
        # per-step numpy overhead outweighs vectorization for small batches
        return [estimate_trajectory(field, u, t, horizon, tol) for u, t in keys]
    us = np.array([k[0] for k in keys])
    ts = np.array([k[1] for k in keys])
    res = solve_cell_batch(field, us, ts, 0.0, [horizon], tol)
    radius = trajectory_radius(field.xi, horizon, tol)
    return [
        SlopeEstimate(float(v) / horizon, radius, float(horizon), "trajectory", field.xi, field.certified)
        for v in res.values[0]
    ]


def effective_field(
    field: ProblemField,
    u_grid: Sequence[float],
    t_grid: Sequence[float],
    horizon: float = DEFAULT_HORIZON,
    tol: ToleranceSpec = DEFAULT_TOL,
    jobs: int = 1,
) -> SlopeTable:
    """Fill a :class:`SlopeTable`.

    Each node uses quadrature when admissible; the rest are integrated as one
    batch of cell problems (split across ``jobs`` processes).
    """
    u_grid = np.atleast_1d(np.asarray(u_grid, dtype=float))
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if u_grid.size == 0 or t_grid.size == 0:
        raise ValueError("grids must be non-empty")
    slopes = DirectSlopes(field, horizon, tol)
    keys = sorted({slopes.key(u, t) for u in u_grid for t in t_grid})

    done = {}
    fallback = []
    failures = []
    for k in keys:
        if field.tau_independent:
            try:
                done[k] = estimate_quadrature(field, *k)
                continue
            except NotSignDefinite as exc:
                if exc.has_zero:
                    done[k] = pinned_estimate(field)
                    continue
            except Exception as exc:  # aggregated below
                failures.append((k, exc))
                continue
        fallback.append(k)
    if failures:
        detail = "; ".join(f"(u={k[0]}, t={k[1]}): {exc}" for k, exc in failures[:5])
        raise SlopeError(f"{len(failures)} table node(s) failed: {detail}")

    if fallback:
        if jobs > 1 and len(fallback) > jobs:
            chunks = [fallback[i::jobs] for i in range(jobs)]
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                parts = list(pool.map(_trajectory_batch, [field] * jobs, chunks, [horizon] * jobs, [tol] * jobs))
            for chunk, part in zip(chunks, parts):
                done.update(zip(chunk, part))
        else:
            done.update(zip(fallback, _trajectory_batch(field, fallback, horizon, tol)))

    estimates = tuple(tuple(done[slopes.key(u, t)] for t in t_grid) for u in u_grid)
    return SlopeTable(
        u_grid=u_grid,
        t_grid=t_grid,
        estimates=estimates,
        u_free=field.u_independent,
        t_free=field.t_independent,
    )


def envelope_excess(traj, lam: float, xi: float, horizon: float, samples: int = 2000) -> float:
    """Largest ``|v(s) - v(s') - lam (s - s')| - xi - (xi/T)|s - s'|`` over sampled pairs."""
    s = np.linspace(traj.t[0], traj.t[-1], samples)
    d = traj(s) - lam * s
    gap = np.abs(d[:, None] - d[None, :])
    allowance = xi + (xi / horizon) * np.abs(s[:, None] - s[None, :])
    return float(np.max(gap - allowance))
