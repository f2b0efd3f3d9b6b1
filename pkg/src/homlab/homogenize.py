"""Discrete homogenized scheme ``v^{k+1} = v^k + lam_k dt`` and reference solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .field import ProblemField
from .integrator import write_csv
from .slope import DEFAULT_HORIZON, DirectSlopes, SlopeEstimate, SlopeTable

__all__ = [
    "HomogenizedPath",
    "SchemeError",
    "ModulusRow",
    "run_scheme",
    "reference_solution",
    "analytic_homogenized",
    "modulus_probe",
]


class SchemeError(RuntimeError):
    """Slope evaluation failed at step ``step``."""

    def __init__(self, step: int, cause: BaseException):
        super().__init__(f"slope estimation failed at step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True, eq=False)
class HomogenizedPath:
    """Breakpoints ``(t_k, v^k)`` of the scheme and the slopes between them.

    ``analytic`` holds the exact homogenized solution when one is known.
    """

    dt: float
    times: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    estimates: tuple
    analytic: Optional[Callable] = None

    @property
    def breakpoints(self):
        return list(zip(self.times.tolist(), self.values.tolist()))

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def radii(self) -> np.ndarray:
        return np.array([e.certified_radius for e in self.estimates])

    @property
    def uncertainty(self) -> np.ndarray:
        """Cumulative ``sum_k radius_k dt`` at each breakpoint."""
        return np.concatenate([[0.0], np.cumsum(self.radii * self.dt)])

    def __call__(self, t):
        x = np.asarray(t, dtype=float)
        if np.any(x < self.times[0]) or np.any(x > self.times[-1] * (1 + 1e-12)):
            raise ValueError("evaluation time outside the path")
        out = np.interp(x, self.times, self.values)
        return float(out) if np.ndim(t) == 0 else out

    def rows(self):
        lam = np.append(self.slopes, np.nan)
        rad = np.append(self.radii, np.nan)
        for k, (t, v) in enumerate(zip(self.times.tolist(), self.values.tolist())):
            yield (k, t, v, float(lam[k]), float(rad[k]))

    def to_csv(self, path_or_file):
        write_csv(path_or_file, ["k", "t", "v", "lambda", "radius"], self.rows())


class _TableSlopes:
    def __init__(self, table: SlopeTable, field: ProblemField):
        self.table = table
        self.field = field

    def __call__(self, u, t):
        return SlopeEstimate(
            value=self.table(u, t),
            certified_radius=self.table.radius_at(u, t),
            horizon=math.nan,
            method="table",
            xi=self.field.xi,
            certified=self.field.certified,
        )


def _slope_callable(field, slope_source, horizon):
    if slope_source is None or slope_source == "direct":
        return DirectSlopes(field, horizon)
    if isinstance(slope_source, SlopeTable):
        return _TableSlopes(slope_source, field)
    if callable(slope_source):
        return slope_source
    raise TypeError(f"unsupported slope source {slope_source!r}")


def run_scheme(
    field: ProblemField,
    v0: float,
    dt: float,
    steps: int,
    slope_source: Union[SlopeTable, DirectSlopes, str, None] = "direct",
    horizon: float = DEFAULT_HORIZON,
) -> HomogenizedPath:
    """Run ``steps`` steps of the explicit scheme from ``v0``.

    ``slope_source`` is a :class:`SlopeTable`, ``"direct"`` (memoized cell
    estimates) or any callable ``(u, t) -> SlopeEstimate``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if int(steps) != steps or steps < 1:
        raise ValueError("steps must be a positive integer")
    steps = int(steps)
    slopes = _slope_callable(field, slope_source, horizon)
    values = np.empty(steps + 1)
    lam = np.empty(steps)
    estimates = []
    v = float(v0)
    values[0] = v
    for k in range(steps):
        try:
            est = slopes(v, k * dt)
        except Exception as exc:
            raise SchemeError(k, exc) from exc
        estimates.append(est)
        lam[k] = est.value
        v = v + est.value * dt
        values[k + 1] = v
    return HomogenizedPath(
        dt=float(dt),
        times=np.arange(steps + 1) * float(dt),
        values=values,
        slopes=lam,
        estimates=tuple(estimates),
        analytic=analytic_homogenized(field, v0),
    )


def _shifted_cosine_slope(b: float) -> float:
    # f = -b + cos(2 pi v): slope -sign(b) sqrt(b^2 - 1) off the pinned band
    return 0.0 if abs(b) <= 1 else -math.copysign(math.sqrt(b * b - 1.0), b)


def _curve(fn):
    vec = np.vectorize(fn, otypes=[float])

    def curve(t):
        return float(fn(float(t))) if np.ndim(t) == 0 else vec(t)

    return curve


def analytic_homogenized(field: ProblemField, u0: float) -> Optional[Callable]:
    """Exact ``u^0(t)`` for built-ins with a closed form, else None."""
    name = field.name if field.source.startswith("builtin:") and not field.reversed else None
    shift = field.shift
    u0 = float(u0)
    if name == "constant":
        c = field.params[0] + shift
        return _curve(lambda t: u0 + c * t)
    if name == "shifted_cosine":
        lam = _shifted_cosine_slope(field.params[0] - shift)
        return _curve(lambda t: u0 + lam * t)
    if name == "example3" and shift == 0.0:
        return _curve(lambda t: u0 - t)
    if name == "example1" and shift == 0.0:
        if abs(u0) <= 1:
            return _curve(lambda t: u0)
        # cosh(a - t) solves u' = -sqrt(u^2 - 1) until it reaches 1
        a = math.acosh(abs(u0))
        sign = math.copysign(1.0, u0)
        return _curve(lambda t: u0 if t <= 0 else sign * math.cosh(max(a - t, 0.0)))
    return None


def reference_solution(
    field: ProblemField,
    u0: float,
    t_end: float,
    dt_ref: float,
    dt_experiment: Optional[float] = None,
    slope_source="direct",
) -> HomogenizedPath:
    """Fine-step scheme used as the homogenized reference on ``[0, t_end]``.

    The step is shrunk so that a whole number of steps lands on ``t_end``.
    """
    if dt_experiment is not None and dt_ref > dt_experiment / 8 * (1 + 1e-12):
        raise ValueError(f"dt_ref={dt_ref} exceeds dt_experiment/8={dt_experiment / 8}")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    steps = max(1, math.ceil(t_end / dt_ref - 1e-9))
    return run_scheme(field, u0, t_end / steps, steps, slope_source)


@dataclass(frozen=True)
class ModulusRow:
    dv: float
    ds: float
    lhs: float
    slack: float
    rhs: float

    @property
    def holds(self) -> bool:
        """False only when the increment exceeds the bound by more than the radii."""
        return self.lhs - self.slack <= self.rhs


def modulus_probe(
    field: ProblemField,
    u: float,
    t: float,
    offsets: Sequence[tuple],
    slopes: Optional[Callable] = None,
) -> list:
    """Compare slope increments with ``xi_bar / |log(alpha (|dv| + |ds|))|``.

    ``lhs`` is the raw increment and ``slack`` the sum of both radii; a row
    fails only when ``lhs - slack > rhs``.
    """
    slopes = slopes or DirectSlopes(field)
    alpha = field.alpha
    for dv, ds in offsets:
        d = abs(dv) + abs(ds)
        if d == 0 or alpha * d >= 1:
            raise ValueError(f"offset ({dv}, {ds}) outside 0 < |dv| + |ds| < 1/alpha")
    base = slopes(u, t)
    rows = []
    for dv, ds in offsets:
        other = slopes(u + dv, t + ds)
        d = abs(dv) + abs(ds)
        rhs = 0.0 if alpha == 0 else field.xi_bar / abs(math.log(alpha * d))
        rows.append(
            ModulusRow(
                dv=float(dv),
                ds=float(ds),
                lhs=abs(other.value - base.value),
                slack=base.certified_radius + other.certified_radius,
                rhs=rhs,
            )
        )
    return rows
