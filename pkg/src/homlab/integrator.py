"""Adaptive Dormand-Prince 5(4) integration of oscillatory scalar ODEs.

All solves here have the form ``y' = f(y/eps, s/eps, y, s)`` (or a frozen
variant of it) with ``f`` 1-periodic in its first two arguments.  The core
therefore carries the state as ``y = eps*(n + theta)`` and the time as
``s = eps*(m + phi)`` with integer ``n, m`` and phases ``theta, phi`` in
``[0, 1)``, and hands ``f`` the phases directly.  This keeps the fast
arguments accurate to ~1e-16 instead of ``ulp(y)/eps``.

Steps are restricted to ``h = eps * 2**-k``.  With a dyadic phase step the
time phase advances exactly and a trajectory sitting exactly on a rest point
stays there; without it, rounding pushes solutions across semi-stable rest
points (e.g. the pinned state of ``g(v + tau) - 1``) and they escape at an
exponential rate.

The same core runs on Python floats and on numpy arrays (many independent
ODEs advanced with a shared step).  Dense output is cubic Hermite.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ToleranceSpec",
    "DEFAULT_TOL",
    "Trajectory",
    "BatchResult",
    "IntegrationError",
    "StepUnderflow",
    "NonFiniteRHS",
    "hermite",
    "integrate_phase",
    "integrate_phase_batch",
    "solve_oscillatory",
    "solve_cell",
    "solve_cell_batch",
    "CELL_MAX_STEP",
    "OSC_MAX_PHASE_STEP",
]

# one twentieth of the unit period; the dyadic ladder rounds it down to 2**-5
CELL_MAX_STEP = 0.05
# eps/10 rounded down to the dyadic ladder
OSC_MAX_PHASE_STEP = 2.0 ** -4
MIN_STEP = 1e-15


@dataclass(frozen=True)
class ToleranceSpec:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-9

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")

    @property
    def unit(self) -> float:
        """Scalar tolerance used to size slack terms."""
        return max(self.rel_tol, self.abs_tol)


DEFAULT_TOL = ToleranceSpec()


class IntegrationError(RuntimeError):
    pass


class StepUnderflow(IntegrationError):
    pass


class NonFiniteRHS(IntegrationError):
    pass


# Dormand-Prince 5(4) tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# 5th minus embedded 4th order weights
E1 = 71 / 57600
E3 = -71 / 16695
E4 = 71 / 1920
E5 = -17253 / 339200
E6 = 22 / 525
E7 = -1 / 40

SAFETY = 0.9
# PI controller exponents for an order-5 pair
PI_BETA = 0.04
PI_ALPHA = 0.2 - 0.75 * PI_BETA
FAC_MIN, FAC_MAX = 0.2, 10.0


def hermite(t0, t1, y0, y1, f0, f1, x):
    h = t1 - t0
    s = (x - t0) / h
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def split_phase(z):
    """``(n, theta)`` with ``z = n + theta``, ``n`` integral and ``0 <= theta < 1``.

    ``z - floor(z)`` rounds tiny negative ``z`` up to exactly 1.0; that case is
    carried into ``n``.
    """
    if np.ndim(z) == 0:
        n = math.floor(z)
        theta = z - n
        return (n + 1, theta - 1.0) if theta >= 1.0 else (n, theta)
    n = np.floor(z)
    theta = z - n
    wrap = theta >= 1.0
    return n + wrap, np.where(wrap, theta - 1.0, theta)


def frac(z):
    """Fractional part in ``[0, 1)``."""
    return split_phase(z)[1]


def _dyadic_floor(x: float) -> float:
    """Largest power of two not exceeding ``x``."""
    m, e = math.frexp(x)
    return math.ldexp(0.5, e)


def _core(F, eps, y0, t_end, tol, max_phase_step, on_accept):
    """Advance ``y' = F(theta, phi, y, s)`` from ``s = 0`` to ``t_end``.

    ``theta`` and ``phi`` are the phases of ``y/eps`` and ``s/eps``.  Calls
    ``on_accept(s0, y0, f0, s1, y1, f1)`` per accepted step and returns the
    number of evaluations of ``F``.
    """
    scalar = np.ndim(y0) == 0
    rtol, atol = tol.rel_tol, tol.abs_tol
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    H_end = t_end / eps
    H_max = _dyadic_floor(min(max_phase_step, H_end))

    n, theta = split_phase(y0 / eps)
    m, phi = 0.0, 0.0
    y = y0 if scalar else np.array(y0, dtype=float)
    s = 0.0

    k1 = F(theta, phi, y, s)
    nfev = 1
    if not np.all(np.isfinite(k1)):
        raise NonFiniteRHS("non-finite right-hand side at the initial point")

    H = H_max
    err_prev = 1.0
    rejected = False
    while True:
        remaining = H_end - (m + phi)
        last = H >= remaining * (1 - 1e-12)
        if last:
            H = remaining
        if H * eps < MIN_STEP:
            raise StepUnderflow(f"step size {H * eps:.3e} underflowed at t={s:.17g}")

        th2 = theta + H * (A21 * k1)
        k2 = F(th2, phi + C2 * H, eps * (n + th2), eps * (m + phi + C2 * H))
        th3 = theta + H * (A31 * k1 + A32 * k2)
        k3 = F(th3, phi + C3 * H, eps * (n + th3), eps * (m + phi + C3 * H))
        th4 = theta + H * (A41 * k1 + A42 * k2 + A43 * k3)
        k4 = F(th4, phi + C4 * H, eps * (n + th4), eps * (m + phi + C4 * H))
        th5 = theta + H * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4)
        k5 = F(th5, phi + C5 * H, eps * (n + th5), eps * (m + phi + C5 * H))
        th6 = theta + H * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5)
        k6 = F(th6, phi + H, eps * (n + th6), eps * (m + phi + H))
        th_new = theta + H * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
        phi_new = phi + H
        y_new = eps * (n + th_new)
        s_new = t_end if last else eps * (m + phi_new)
        k7 = F(th_new, phi_new, y_new, s_new)
        nfev += 6

        e = (eps * H) * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        # defect of the Hermite interpolant at the midpoint; catches kinks in f
        # that the embedded pair straddles without noticing
        dth = th_new - theta
        th_mid = theta + 0.5 * dth + 0.125 * H * (k1 - k7)
        ph_mid = phi + 0.5 * H
        k_mid = F(th_mid, ph_mid, eps * (n + th_mid), eps * (m + ph_mid))
        nfev += 1
        defect = (eps * H) * (1.5 * dth / H - 0.25 * (k1 + k7) - k_mid)
        if scalar:
            e = max(abs(e), abs(defect))
        else:
            e = np.maximum(np.abs(e), np.abs(defect))
        if scalar:
            err = abs(e) / (atol + rtol * max(abs(y), abs(y_new)))
        else:
            err = float(np.max(np.abs(e) / (atol + rtol * np.maximum(np.abs(y), np.abs(y_new)))))

        if not math.isfinite(err):
            for k in (k2, k3, k4, k5, k6, k7):
                if not np.all(np.isfinite(k)):
                    raise NonFiniteRHS(f"non-finite right-hand side near t={s:.17g}")
            err = math.inf

        if err <= 1.0:
            on_accept(s, y, k1, s_new, y_new, k7)
            if last:
                return nfev
            shift, theta = split_phase(th_new)
            n = n + shift
            shift = math.floor(phi_new)
            m += shift
            phi = phi_new - shift
            y, s, k1 = y_new, s_new, k7
            if err == 0.0:
                fac = FAC_MAX
            else:
                fac = min(FAC_MAX, max(FAC_MIN, SAFETY * err ** (-PI_ALPHA) * err_prev ** PI_BETA))
            if rejected:
                fac = min(fac, 1.0)
            err_prev = max(err, 1e-4)
            rejected = False
            H = _dyadic_floor(min(H_max, H * fac))
        else:
            fac = FAC_MIN if not math.isfinite(err) else max(FAC_MIN, SAFETY * err ** (-0.2))
            H = _dyadic_floor(H * fac)
            rejected = True


def _run_core(*args):
    try:
        return _core(*args)
    except ArithmeticError as exc:
        # domain errors of checked expression fields
        raise NonFiniteRHS(f"right-hand side failed: {exc}") from exc


@dataclass(frozen=True)
class Trajectory:
    """Densely sampled scalar solution.

    ``t``, ``u`` and ``du`` hold the accepted step points and the right-hand
    side there; calling the trajectory interpolates with cubic Hermite.
    ``epsilon`` is None for cell problems.
    """

    epsilon: Optional[float]
    t: np.ndarray
    u: np.ndarray
    du: np.ndarray
    rel_tol: float
    abs_tol: float
    max_step: float
    rhs_evals: int

    @property
    def samples(self):
        return list(zip(self.t.tolist(), self.u.tolist()))

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def final(self) -> float:
        return float(self.u[-1])

    def __call__(self, times):
        x = np.asarray(times, dtype=float)
        span = max(1.0, abs(self.t[-1]))
        if np.any(x < self.t[0] - 1e-12 * span) or np.any(x > self.t[-1] + 1e-12 * span):
            raise ValueError("evaluation time outside the trajectory")
        i = np.clip(np.searchsorted(self.t, x, side="right") - 1, 0, len(self.t) - 2)
        out = hermite(self.t[i], self.t[i + 1], self.u[i], self.u[i + 1], self.du[i], self.du[i + 1], x)
        return float(out) if np.ndim(times) == 0 else out

    def to_csv(self, path_or_file, column="u"):
        write_csv(path_or_file, ["t", column], zip(self.t.tolist(), self.u.tolist()))


def write_csv(path_or_file, header, rows):
    """CSV with a header row and ``repr`` floats (round-trippable, locale free)."""
    if hasattr(path_or_file, "write"):
        writer = csv.writer(path_or_file, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(x) for x in row])
        return
    with open(path_or_file, "w", newline="") as fh:
        write_csv(fh, header, rows)


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def integrate_phase(
    F: Callable[[float, float, float, float], float],
    eps: float,
    y0: float,
    t_end: float,
    *,
    tol: ToleranceSpec = DEFAULT_TOL,
    max_phase_step: float = OSC_MAX_PHASE_STEP,
    epsilon: Optional[float] = None,
) -> Trajectory:
    """Scalar solve of ``y' = F(theta, phi, y, s)`` recording every accepted step."""
    ts, ys, fs = [0.0], [float(y0)], []

    def on_accept(s, y, f, s1, y1, f1):
        if not fs:
            fs.append(f)
        ts.append(s1)
        ys.append(y1)
        fs.append(f1)

    nfev = _run_core(F, eps, float(y0), t_end, tol, max_phase_step, on_accept)
    return Trajectory(
        epsilon=epsilon,
        t=np.array(ts),
        u=np.array(ys),
        du=np.array(fs),
        rel_tol=tol.rel_tol,
        abs_tol=tol.abs_tol,
        max_step=eps * _dyadic_floor(min(max_phase_step, t_end / eps)),
        rhs_evals=nfev,
    )


@dataclass(frozen=True)
class BatchResult:
    """``values[i, j]`` is component ``j`` at ``times[i]``."""

    times: np.ndarray
    values: np.ndarray
    rhs_evals: int


def integrate_phase_batch(
    F: Callable[..., np.ndarray],
    eps: float,
    y0: np.ndarray,
    times: Sequence[float],
    *,
    tol: ToleranceSpec = DEFAULT_TOL,
    max_phase_step: float = OSC_MAX_PHASE_STEP,
) -> BatchResult:
    """Vector of independent solves sampled at ``times`` only.

    Memory does not grow with the number of steps.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("times must be non-negative and strictly increasing")
    y0 = np.array(y0, dtype=float)
    out = np.empty((times.size, y0.size))
    nxt = 0
    while nxt < times.size and times[nxt] == 0.0:
        out[nxt] = y0
        nxt += 1
    if nxt == times.size:
        return BatchResult(times, out, 0)
    pending = [nxt]

    def on_accept(s, y, f, s1, y1, f1):
        i = pending[0]
        while i < times.size and times[i] <= s1:
            x = times[i]
            out[i] = y1 if x == s1 else hermite(s, s1, y, y1, f, f1, x)
            i += 1
        pending[0] = i

    nfev = _run_core(F, eps, y0, float(times[-1]), tol, max_phase_step, on_accept)
    return BatchResult(times, out, nfev)


def solve_oscillatory(field, epsilon: float, u0: float, t_end: float, tol: ToleranceSpec = DEFAULT_TOL) -> Trajectory:
    """Solve ``u' = f(u/eps, t/eps, u, t)``, ``u(0) = u0`` on ``[0, t_end]``.

    Steps never exceed ``eps/10`` so no period of the fast time is skipped.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    lo, hi = field.u_box
    if not lo < u0 < hi:
        warnings.warn(f"u0={u0} lies outside the interior of u_box {field.u_box}", stacklevel=2)
    return integrate_phase(field.evaluate, epsilon, u0, t_end, tol=tol, epsilon=epsilon)


def solve_cell(
    field,
    u_frozen: float,
    t_frozen: float,
    v0: float,
    tau_end: float,
    tol: ToleranceSpec = DEFAULT_TOL,
) -> Trajectory:
    """Solve the frozen cell problem ``v' = f(v, tau, u_frozen, t_frozen)``, ``v(0) = v0``."""
    if tau_end <= 0:
        raise ValueError("tau_end must be positive")
    f = field.evaluate

    def F(theta, phi, v, tau):
        return f(theta, phi, u_frozen, t_frozen)

    return integrate_phase(F, 1.0, v0, tau_end, tol=tol, max_phase_step=CELL_MAX_STEP)


def solve_cell_batch(
    field,
    u_frozen,
    t_frozen,
    v0,
    times: Sequence[float],
    tol: ToleranceSpec = DEFAULT_TOL,
) -> BatchResult:
    """Many cell problems, one per frozen ``(u, t)`` pair, advanced together."""
    u_frozen = np.atleast_1d(np.asarray(u_frozen, dtype=float))
    t_frozen = np.broadcast_to(np.asarray(t_frozen, dtype=float), u_frozen.shape)
    v0 = np.broadcast_to(np.asarray(v0, dtype=float), u_frozen.shape)
    f = field.evaluate_array

    def F(theta, phi, v, tau):
        return f(theta, phi, u_frozen, t_frozen)

    return integrate_phase_batch(F, 1.0, v0, times, tol=tol, max_phase_step=CELL_MAX_STEP)
