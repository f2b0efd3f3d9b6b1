"""Oscillatory right-hand sides f(v, tau, u, t) and their bound metadata.

A field is 1-periodic in ``v`` and ``tau`` and non-increasing in ``u``.  The
bounds ``alpha`` (Lipschitz constant, measured as the largest partial
derivative, i.e. with respect to the l1 distance on the arguments) and
``beta`` (sup norm) are declared over the compact box ``u_box``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from . import expr

__all__ = [
    "ProblemField",
    "BoundsReport",
    "BUILTINS",
    "FIELD_VARIABLES",
    "builtin",
    "from_expression",
    "validate",
    "DEFECT_TOLERANCE",
]

TWO_PI = 2.0 * math.pi
FIELD_VARIABLES = ("v", "tau", "u", "t")
DEFAULT_U_BOX = (-4.0, 4.0)

# fields whose sampled defects exceed this are flagged uncertified
DEFECT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ProblemField:
    """Right-hand side ``f(v, tau, u, t)`` with declared bounds.

    ``evaluate`` takes Python floats and is the fast path for scalar solves;
    ``evaluate_array`` broadcasts over numpy arrays.
    """

    evaluate: Callable[[float, float, float, float], float] = dc_field(repr=False, compare=False)
    evaluate_array: Callable[..., np.ndarray] = dc_field(repr=False, compare=False)
    alpha: float
    beta: float
    lipschitz_v: float
    u_box: tuple
    tau_independent: bool
    u_independent: bool
    t_independent: bool
    source: str
    params: tuple = ()
    shift: float = 0.0
    reversed: bool = False

    def __post_init__(self):
        if min(self.alpha, self.beta, self.lipschitz_v) < 0:
            raise ValueError("alpha, beta and lipschitz_v must be non-negative")
        lo, hi = self.u_box
        if not lo < hi:
            raise ValueError(f"u_box must be a non-empty interval, got {self.u_box}")

    def __call__(self, v, tau, u, t):
        return self.evaluate(v, tau, u, t)

    def __reduce__(self):
        # rebuilt from the source so fields cross process boundaries
        return (_rebuild, (self.source, self.params, self.u_box, self._declared(), self.shift, self.reversed))

    def _declared(self):
        if self.source.startswith("builtin:"):
            return None
        return (self.alpha, self.beta - abs(self.shift), self.lipschitz_v)

    @property
    def xi(self) -> float:
        """Ergodic radius ``1 + 2 beta``."""
        return 1.0 + 2.0 * self.beta

    @property
    def xi_bar(self) -> float:
        """Stability constant ``(3 + 2 xi)(1 + 2 L)``."""
        return (3.0 + 2.0 * self.xi) * (1.0 + 2.0 * self.lipschitz_v)

    @property
    def name(self) -> str:
        return self.source.split(":", 1)[1] if self.source.startswith("builtin:") else self.source

    @cached_property
    def bounds_report(self) -> "BoundsReport":
        return validate(self, 10_000, seed=0)

    @property
    def certified(self) -> bool:
        """True when sampled defects and bounds are consistent with the declaration."""
        if self.source.startswith("builtin:") and self.shift == 0.0 and not self.reversed:
            return True
        return self.bounds_report.consistent_with(self)

    def shifted(self, gamma: float) -> "ProblemField":
        """The field ``f + gamma`` (bounds adjusted)."""
        f, fa = self.evaluate, self.evaluate_array
        return replace(
            self,
            evaluate=lambda v, tau, u, t: f(v, tau, u, t) + gamma,
            evaluate_array=lambda v, tau, u, t: fa(v, tau, u, t) + gamma,
            beta=self.beta + abs(gamma),
            shift=self.shift + gamma,
        )


    def time_reversed(self) -> "ProblemField":
        """The field ``f(v, -tau, u, t)``; the same object when ``f`` ignores ``tau``."""
        if self.tau_independent:
            return self
        f, fa = self.evaluate, self.evaluate_array
        return replace(
            self,
            evaluate=lambda v, tau, u, t: f(v, -tau, u, t),
            evaluate_array=lambda v, tau, u, t: fa(v, np.negative(tau), u, t),
            reversed=not self.reversed,
        )


def _rebuild(source, params, u_box, declared, shift, reversed_=False):
    if source.startswith("builtin:"):
        fld = builtin(source.split(":", 1)[1], params, u_box=u_box)
    else:
        alpha, beta, lip = declared
        fld = from_expression(source, alpha=alpha, beta=beta, lipschitz_v=lip, u_box=u_box)
    if reversed_:
        fld = fld.time_reversed()
    return fld.shifted(shift) if shift else fld


# -- built-ins -------------------------------------------------------------


def _full(x, *args):
    shape = np.broadcast_shapes(np.shape(x), *(np.shape(a) for a in args))
    if np.shape(x) == shape:
        return np.asarray(x, dtype=float)
    return np.broadcast_to(x, shape).astype(float)


def _g3(w):
    w = w - math.floor(w)
    return abs(w - 0.5)


def _example1(params, u_box):
    umax = max(abs(u_box[0]), abs(u_box[1]))
    return dict(
        evaluate=lambda v, tau, u, t: -u + math.cos(TWO_PI * v),
        evaluate_array=lambda v, tau, u, t: _full(-u + np.cos(TWO_PI * np.asarray(v, float)), tau, t),
        alpha=TWO_PI,
        beta=umax + 1.0,
        lipschitz_v=TWO_PI,
        tau_independent=True,
        u_independent=False,
        t_independent=True,
    )


def _example2(params, u_box):
    umax = max(abs(u_box[0]), abs(u_box[1]))
    return dict(
        evaluate=lambda v, tau, u, t: -u + abs(math.sin(TWO_PI * v)),
        evaluate_array=lambda v, tau, u, t: _full(-u + np.abs(np.sin(TWO_PI * np.asarray(v, float))), tau, t),
        alpha=TWO_PI,
        beta=umax + 1.0,
        lipschitz_v=TWO_PI,
        tau_independent=True,
        u_independent=False,
        t_independent=True,
    )


def _example3(params, u_box):
    def arr(v, tau, u, t):
        w = np.asarray(v, float) + tau
        w = w - np.floor(w)
        return _full(np.abs(w - 0.5) - 1.0, u, t)

    return dict(
        evaluate=lambda v, tau, u, t: _g3(v + tau) - 1.0,
        evaluate_array=arr,
        alpha=1.0,
        beta=1.0,
        lipschitz_v=1.0,
        tau_independent=False,
        u_independent=True,
        t_independent=True,
    )


def _constant(params, u_box):
    (c,) = params
    c = float(c)
    return dict(
        evaluate=lambda v, tau, u, t: c,
        evaluate_array=lambda v, tau, u, t: np.full(np.broadcast(v, tau, u, t).shape, c),
        alpha=0.0,
        beta=abs(c),
        lipschitz_v=0.0,
        tau_independent=True,
        u_independent=True,
        t_independent=True,
    )


def _shifted_cosine(params, u_box):
    (a,) = params
    a = float(a)
    return dict(
        evaluate=lambda v, tau, u, t: -a + math.cos(TWO_PI * v),
        evaluate_array=lambda v, tau, u, t: _full(-a + np.cos(TWO_PI * np.asarray(v, float)), tau, u, t),
        alpha=TWO_PI,
        beta=abs(a) + 1.0,
        lipschitz_v=TWO_PI,
        tau_independent=True,
        u_independent=True,
        t_independent=True,
    )


# name -> (builder, number of params, help text)
BUILTINS = {
    "example1": (_example1, 0, "f = -u + cos(2 pi v)"),
    "example2": (_example2, 0, "f = -u + |sin(2 pi v)|"),
    "example3": (_example3, 0, "f = g(v + tau) - 1, g 1-periodic, g(w) = |w - 1/2| on [0,1]"),
    "constant": (_constant, 1, "f = c  (params: c)"),
    "shifted_cosine": (_shifted_cosine, 1, "f = -a + cos(2 pi v)  (params: a)"),
}


def builtin(name: str, params: Sequence[float] = (), u_box=DEFAULT_U_BOX) -> ProblemField:
    """Construct a built-in field by name."""
    try:
        build, nparams, _ = BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown built-in field {name!r}; choose from {sorted(BUILTINS)}") from None
    params = tuple(params)
    if len(params) != nparams:
        raise ValueError(f"{name} takes {nparams} parameter(s), got {len(params)}")
    for p in params:
        if not isinstance(p, (int, float)) or not math.isfinite(p):
            raise ValueError(f"invalid parameter {p!r} for {name}")
    u_box = (float(u_box[0]), float(u_box[1]))
    return ProblemField(source=f"builtin:{name}", params=params, u_box=u_box, **build(params, u_box))


def from_expression(
    source: str,
    *,
    alpha: float,
    beta: float,
    lipschitz_v: float,
    u_box=DEFAULT_U_BOX,
) -> ProblemField:
    """Field defined by an expression in ``v, tau, u, t`` with declared bounds."""
    ast = expr.parse(source, FIELD_VARIABLES)
    used = expr.free_variables(ast)
    return ProblemField(
        evaluate=expr.compile_scalar(ast, FIELD_VARIABLES),
        evaluate_array=expr.compile_array(ast, FIELD_VARIABLES),
        alpha=float(alpha),
        beta=float(beta),
        lipschitz_v=float(lipschitz_v),
        u_box=(float(u_box[0]), float(u_box[1])),
        tau_independent="tau" not in used,
        u_independent="u" not in used,
        t_independent="t" not in used,
        source=source,
    )


# -- validation ------------------------------------------------------------


@dataclass(frozen=True)
class BoundsReport:
    sampled_beta: float
    sampled_alpha: float
    periodicity_defect: float
    monotonicity_defect: float
    sample_count: int

    def consistent_with(self, fld: ProblemField, tol: float = DEFECT_TOLERANCE) -> bool:
        return (
            self.periodicity_defect <= tol
            and self.monotonicity_defect <= tol
            and self.sampled_beta <= fld.beta + tol
            and self.sampled_alpha <= fld.alpha * (1 + 1e-6) + tol
        )


def _sample_points(fld, samples, t_ref, rng):
    lo, hi = fld.u_box
    n_mc = samples // 2
    n_lat = max(samples - n_mc, 1)
    side = max(int(round(n_lat ** 0.25)), 2)
    axes = (
        np.linspace(0.0, 1.0, side),
        np.linspace(0.0, 1.0, side),
        np.linspace(lo, hi, side),
        np.linspace(0.0, t_ref, side),
    )
    lattice = [g.ravel() for g in np.meshgrid(*axes, indexing="ij")]
    mc = [
        rng.uniform(0.0, 1.0, n_mc),
        rng.uniform(0.0, 1.0, n_mc),
        rng.uniform(lo, hi, n_mc),
        rng.uniform(0.0, t_ref, n_mc),
    ]
    return [np.concatenate([a, b]) for a, b in zip(lattice, mc)]


def validate(fld: ProblemField, samples: int = 10_000, *, t_ref: float = 1.0, seed: Optional[int] = 0) -> BoundsReport:
    """Sample ``fld`` over ``[0,1]^2 x u_box x [0, t_ref]`` and report defects.

    Periodicity is checked under shifts ``v+k``, ``tau+k`` and ``(v+k, tau+k)``
    for ``k = 1, 2, 3`` (defect divided by ``k``); monotonicity on sampled pairs ``u1 < u2``; ``alpha`` is
    estimated from one-sided difference quotients along each coordinate.
    """
    if samples < 100:
        raise ValueError("validate needs at least 100 samples")
    rng = np.random.default_rng(seed)
    v, tau, u, t = _sample_points(fld, samples, t_ref, rng)
    f = fld.evaluate_array
    with np.errstate(all="ignore"):
        base = f(v, tau, u, t)
        finite = np.isfinite(base)
        sampled_beta = float(np.max(np.abs(base))) if finite.all() else math.inf

        period = 0.0
        for k in (1.0, 2.0, 3.0):
            for dv, dtau in ((k, 0.0), (0.0, k), (k, k)):
                shifted = f(v + dv, tau + dtau, u, t)
                # per unit shift, so f = v reports 1 for every k
                period = max(period, float(np.nanmax(np.abs(shifted - base))) / k)

        lo, hi = fld.u_box
        u1 = rng.uniform(lo, hi, v.size)
        u2 = rng.uniform(lo, hi, v.size)
        u1, u2 = np.minimum(u1, u2), np.maximum(u1, u2)
        mono = float(np.nanmax(np.maximum(f(v, tau, u2, t) - f(v, tau, u1, t), 0.0)))

        h = 1e-7
        alpha = 0.0
        for axis in range(4):
            args = [v, tau, np.clip(u, lo, hi - h), t]
            stepped = list(args)
            stepped[axis] = args[axis] + h
            q = np.abs(f(*stepped) - f(*args)) / h
            alpha = max(alpha, float(np.nanmax(q)))

    if not finite.all():
        period = mono = math.inf
    return BoundsReport(
        sampled_beta=sampled_beta,
        sampled_alpha=alpha,
        periodicity_defect=period,
        monotonicity_defect=mono,
        sample_count=int(v.size),
    )
