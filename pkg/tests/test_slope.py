import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homlab.field import builtin, from_expression
from homlab.integrator import DEFAULT_TOL, solve_cell
from homlab.slope import (
    DirectSlopes,
    NotSignDefinite,
    NotTauIndependent,
    SlopeTable,
    TableCoverageError,
    effective_field,
    envelope_excess,
    estimate,
    estimate_quadrature,
    estimate_trajectory,
    estimate_window,
    trajectory_radius,
)

EX1, EX2, EX3 = builtin("example1"), builtin("example2"), builtin("example3")

# high-precision values of 1 / int_0^1 dv / (|sin 2 pi v| + gamma)
LAMBDA_GAMMA = {1e-2: 0.29645736335918122, 1e-4: 0.15861041991567755, 1e-6: 0.10826613702680916}


def riemann_slope(a, n=10**7):
    # midpoint rule is spectrally accurate for smooth periodic integrands
    v = (np.arange(n) + 0.5) / n
    return -1.0 / np.mean(1.0 / (a - np.cos(2 * np.pi * v)))


def test_constant_trajectory_exact():
    est = estimate_trajectory(builtin("constant", [-1.0]), 0.0, 0.0, horizon=100)
    assert est.value == -1.0
    assert est.certified_radius >= 3 / 100
    assert est.certified_radius <= 3 / 100 + 10 * DEFAULT_TOL.unit * 101 / 100


def test_example3_trajectory():
    est = estimate_trajectory(EX3, 0.7, 2.3, horizon=1e4)
    assert est.contains(-1.0)
    assert est.method == "trajectory" and est.xi == 3.0


def test_example1_trajectory():
    est = estimate_trajectory(EX1, 2.0, 0.0, horizon=1e4)
    assert est.contains(-math.sqrt(3))
    assert est.certified_radius >= est.xi / est.horizon


def test_horizon_minimum():
    with pytest.raises(ValueError):
        estimate_trajectory(EX1, 2.0, 0.0, horizon=5)


@pytest.mark.parametrize("u", [1.5, 2.0, 3.0])
def test_quadrature_against_riemann(u):
    est = estimate_quadrature(EX1, u, 0.0)
    assert abs(est.value - riemann_slope(u)) <= 1e-8
    assert abs(est.value + math.sqrt(u * u - 1)) <= est.certified_radius + 1e-15
    assert math.isnan(est.horizon)


def test_quadrature_example2_log_asymptotic():
    est = estimate_quadrature(EX2, -1e-6, 0.0)
    ratio = est.value * abs(math.log(1e-6)) / (math.pi / 2)
    assert 0.85 <= ratio <= 1.0
    assert est.value == pytest.approx(LAMBDA_GAMMA[1e-6], abs=1e-9)


@pytest.mark.parametrize("gamma", sorted(LAMBDA_GAMMA))
def test_quadrature_shifted_cell(gamma):
    est = estimate_quadrature(EX2.shifted(gamma), 0.0, 0.0)
    assert est.value == pytest.approx(LAMBDA_GAMMA[gamma], abs=1e-11)


def test_quadrature_rejections():
    with pytest.raises(NotTauIndependent):
        estimate_quadrature(EX3, 0.0, 0.0)
    with pytest.raises(NotSignDefinite) as info:
        estimate_quadrature(EX1, 0.5, 0.0)
    assert info.value.has_zero
    near = from_expression("-u + abs(sin(2*pi*v)) + 1e-9", alpha=7, beta=6, lipschitz_v=7)
    with pytest.raises(NotSignDefinite) as info:
        estimate_quadrature(near, 0.0, 0.0)
    assert not info.value.has_zero


def test_estimate_dispatch():
    assert estimate(EX1, 2.0, 0.0).method == "quadrature"
    pinned = estimate(EX1, 0.5, 0.0)
    assert pinned.method == "pinned" and pinned.value == 0.0
    assert estimate(EX3, 0.0, 0.0, horizon=100).method == "trajectory"


def test_pinned_matches_trajectory():
    traj = estimate_trajectory(EX1, 0.5, 0.0, horizon=1000)
    assert abs(traj.value) <= traj.certified_radius


def test_window_constant():
    lo, hi = estimate_window(builtin("constant", [0.7]), 0, 0, 200, 20, 1.0)
    assert lo == pytest.approx(0.7, abs=1e-12) and hi == pytest.approx(0.7, abs=1e-12)


def test_window_brackets_example1():
    lo, hi = estimate_window(EX1, 2.0, 0.0, 2000, 100, 1.0)
    assert lo <= -math.sqrt(3) <= hi


def test_window_arguments():
    with pytest.raises(ValueError):
        estimate_window(EX1, 2.0, 0.0, 100, 60, 1.0)
    with pytest.raises(ValueError):
        estimate_window(EX1, 2.0, 0.0, 100, 10, 0.0)


@pytest.mark.parametrize(
    "fld,u",
    [(EX1, 2.0), (EX1, 0.3), (EX2, -0.5), (EX3, 0.0), (builtin("shifted_cosine", [1.5]), 0.0)],
    ids=["example1", "example1-pinned", "example2", "example3", "shifted_cosine"],
)
def test_window_width(fld, u):
    window = 50.0
    lo, hi = estimate_window(fld, u, 0.0, 500, window, 0.5)
    assert hi - lo <= 2 * fld.xi / window + 20 * DEFAULT_TOL.unit


def test_effective_field_example1():
    table = effective_field(EX1, [1.5, 2.0, 3.0], [0.0])
    expected = -np.sqrt(np.array([1.25, 3.0, 8.0]))
    assert np.all(np.abs(table.lam[:, 0] - expected) <= table.radius[:, 0] + 1e-15)
    assert table(2.5, 0.0) == pytest.approx(0.5 * (expected[1] + expected[2]))
    assert table.monotonicity_excess() <= 0


def test_effective_field_example3_and_constant():
    table = effective_field(EX3, [-1.0, 0.0, 1.0], [0.0, 0.5], horizon=200)
    assert np.all(np.abs(table.lam + 1) <= table.radius)
    assert len({e for row in table.estimates for e in row}) == 1
    flat = effective_field(builtin("constant", [0.4]), [0.0, 1.0], [0.0, 1.0])
    assert np.allclose(flat.lam, 0.4, rtol=0, atol=1e-14)


def test_table_pinned_nodes_and_csv():
    table = effective_field(EX1, [0.0, 2.0], [0.0])
    assert table.lam[0, 0] == 0.0
    buf = io.StringIO()
    table.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "u,t,lambda,radius,method"
    assert lines[1].endswith(",pinned") and lines[2].endswith(",quadrature")


def test_table_coverage():
    table = effective_field(EX1, [1.5, 2.0], [0.0])
    with pytest.raises(TableCoverageError):
        table(3.0, 0.0)
    # t axis collapsed for a t-independent field
    assert table(1.75, 12.0) == table(1.75, 0.0)
    with pytest.raises(ValueError):
        SlopeTable(np.array([1.0, 0.5]), np.array([0.0]), ((None,), (None,)))


def test_direct_slopes_memo():
    slopes = DirectSlopes(EX3, horizon=100)
    assert slopes(0.1, 0.2) is slopes(5.0, 9.0)


def test_trajectory_batch_matches_scalar():
    fld = from_expression("-u + cos(2*pi*v) + 0.3*sin(2*pi*tau)", alpha=8, beta=5.3, lipschitz_v=7)
    us = np.linspace(-0.5, 0.5, 17)
    table = effective_field(fld, us, [0.0], horizon=100)
    ref = estimate_trajectory(fld, us[3], 0.0, horizon=100)
    assert table.lam[3, 0] == pytest.approx(ref.value, abs=1e-8)


# -- properties ------------------------------------------------------------


@settings(max_examples=6)
@given(u=st.floats(-3, 3))
def test_v0_independence(u):
    fld = EX2 if u < 0 else EX1
    a = estimate_trajectory(fld, u, 0.0, horizon=500, v0=0.0)
    b = estimate_trajectory(fld, u, 0.0, horizon=500, v0=0.37)
    assert abs(a.value - b.value) <= a.certified_radius + b.certified_radius


@settings(max_examples=6)
@given(u1=st.floats(-3, 3), u2=st.floats(-3, 3))
def test_monotone_in_u(u1, u2):
    lo, hi = min(u1, u2), max(u1, u2)
    a = estimate_trajectory(EX1, lo, 0.0, horizon=300)
    b = estimate_trajectory(EX1, hi, 0.0, horizon=300)
    assert b.value <= a.value + a.certified_radius + b.certified_radius


@pytest.mark.parametrize("fld,u", [(EX1, 1.2), (EX2, -0.3), (EX3, 0.0)], ids=["example1", "example2", "example3"])
def test_ergodic_envelope(fld, u):
    H = 400.0
    est = estimate_trajectory(fld, u, 0.0, horizon=H)
    traj = solve_cell(fld, u, 0.0, 0.0, H)
    assert envelope_excess(traj, est.value, fld.xi, H) <= 10 * DEFAULT_TOL.unit * (1 + H)


def test_quadrature_trajectory_agreement():
    for u in [1.5, 2.0, -2.5]:
        q = estimate_quadrature(EX1, u, 0.0)
        t = estimate_trajectory(EX1, u, 0.0, horizon=1000)
        assert abs(q.value - t.value) <= q.certified_radius + t.certified_radius


def test_doubling_halves_radius():
    tol = DEFAULT_TOL
    for H in [10.0, 100.0, 1e4]:
        assert trajectory_radius(11.0, 2 * H, tol) <= trajectory_radius(11.0, H, tol) / 2 + 10 * tol.unit
