import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homlab.field import builtin, from_expression
from homlab.homogenize import (
    SchemeError,
    analytic_homogenized,
    modulus_probe,
    reference_solution,
    run_scheme,
)
from homlab.slope import effective_field

EX1, EX2, EX3 = builtin("example1"), builtin("example2"), builtin("example3")


def test_example3_scheme():
    path = run_scheme(EX3, 0.0, 0.1, 10, horizon=1e4)
    est = path.estimates[0]
    assert np.allclose(path.values, -0.1 * np.arange(11) * -est.value, atol=1e-12)
    assert abs(path(1.0) + 1.0) <= 10 * est.certified_radius


def test_example1_one_step():
    path = run_scheme(EX1, 2.0, 0.01, 1)
    assert abs(path.values[1] - (2 - math.sqrt(3) * 0.01)) <= path.estimates[0].certified_radius * 0.01 + 1e-15


def test_constant_line():
    path = run_scheme(builtin("constant", [0.3]), 1.0, 0.25, 8)
    assert np.allclose(path.values, 1.0 + 0.3 * path.times, atol=1e-14)
    assert path.slopes.shape == (8,)


def test_recursion_is_exact_and_interpolation_hits_breakpoints():
    path = run_scheme(EX1, 2.5, 0.05, 20)
    assert np.array_equal(path.values[1:], path.values[:-1] + path.slopes * path.dt)
    assert np.array_equal(path(path.times), path.values)
    mid = 0.5 * (path.times[3] + path.times[4])
    assert path(mid) == pytest.approx(0.5 * (path.values[3] + path.values[4]))
    with pytest.raises(ValueError):
        path(path.t_end + 1)


def test_table_source():
    table = effective_field(EX1, np.linspace(1.0, 3.0, 201), [0.0])
    a = run_scheme(EX1, 2.0, 0.01, 20, slope_source=table)
    b = run_scheme(EX1, 2.0, 0.01, 20)
    assert np.max(np.abs(a.values - b.values)) < 1e-4
    assert a.estimates[0].method == "table"


def test_scheme_error_reports_step():
    table = effective_field(EX1, [1.9, 2.0], [0.0])
    with pytest.raises(SchemeError) as info:
        run_scheme(EX1, 2.0, 0.01, 50, slope_source=table)
    assert info.value.step > 0


def test_bad_arguments():
    with pytest.raises(ValueError):
        run_scheme(EX1, 2.0, 0.0, 1)
    with pytest.raises(ValueError):
        run_scheme(EX1, 2.0, 0.1, 0)
    with pytest.raises(ValueError):
        reference_solution(EX1, 2.0, 1.0, 0.01, dt_experiment=0.05)


def test_csv_and_uncertainty():
    path = run_scheme(EX3, 0.0, 0.5, 2, horizon=100)
    buf = io.StringIO()
    path.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "k,t,v,lambda,radius"
    assert len(lines) == 4 and lines[-1].endswith(",nan,nan")
    assert path.uncertainty[-1] == pytest.approx(sum(e.certified_radius for e in path.estimates) * 0.5)


def test_reference_example3_and_constant():
    path = reference_solution(EX3, 0.0, 1.0, 0.1)
    assert path.analytic(0.7) == -0.7
    assert reference_solution(builtin("constant", [2.0]), 1.0, 1.0, 0.5).analytic(3.0) == 7.0


def test_analytic_example1():
    u = analytic_homogenized(EX1, 2.0)
    assert u(0.0) == 2.0
    assert u(5.0) == 1.0
    h = 1e-6
    t = 0.3
    assert (u(t + h) - u(t - h)) / (2 * h) == pytest.approx(-math.sqrt(u(t) ** 2 - 1), rel=1e-6)
    assert analytic_homogenized(EX1, -2.0)(0.3) == pytest.approx(-u(0.3))
    assert analytic_homogenized(EX1, 0.5)(1.0) == 0.5
    assert analytic_homogenized(EX2, 0.5) is None


def test_reference_example1_converges():
    ends = []
    for dt in [4e-3, 2e-3, 1e-3]:
        ends.append(reference_solution(EX1, 2.0, 0.5, dt).values[-1])
    exact = analytic_homogenized(EX1, 2.0)(0.5)
    errs = [abs(e - exact) for e in ends]
    assert errs[0] > errs[1] > errs[2]
    # trend at least as good as c dt / |log dt|
    assert errs[2] <= errs[0] * (1e-3 / 4e-3) * math.log(4e-3) / math.log(1e-3) * 1.5


def test_error_decreases_with_dt():
    exact = analytic_homogenized(EX1, 2.0)
    errs = []
    for dt in [0.1, 0.05, 0.025]:
        path = run_scheme(EX1, 2.0, dt, round(1.0 / dt))
        errs.append(np.max(np.abs(path.values - exact(path.times))))
    assert errs[0] >= errs[1] >= errs[2]


def test_lipschitz_paths():
    path = run_scheme(EX1, 2.0, 0.05, 20)
    q = np.abs(np.diff(path.values)) / path.dt
    assert np.all(q <= EX1.beta + max(e.certified_radius for e in path.estimates))


@settings(max_examples=10)
@given(a=st.floats(-3, 3), gap=st.floats(0, 2))
def test_monotone_ordering(a, gap):
    b = min(a + gap, 3.0)
    fld = builtin("shifted_cosine", [1.5])
    pa = run_scheme(fld, a, 0.1, 10)
    pb = run_scheme(fld, b, 0.1, 10)
    assert np.all(pa.values <= pb.values)


def test_modulus_example2():
    rows = modulus_probe(EX2, -1e-2, 0.0, [(-1e-4, 0.0), (-1e-6, 0.0)])
    assert rows[0].lhs == pytest.approx(5.575e-4, rel=1e-3)
    assert rows[1].lhs == pytest.approx(5.592e-6, rel=1e-3)
    assert all(r.holds for r in rows)


def test_modulus_constant_and_example3():
    rows = modulus_probe(builtin("constant", [1.0]), 0.0, 0.0, [(0.1, 0.0), (0.0, 0.5)])
    assert all(r.lhs == 0.0 and r.holds for r in rows)
    rows = modulus_probe(EX3, 0.0, 0.0, [(0.1, 0.1)])
    assert rows[0].lhs == 0.0 and rows[0].holds


def test_modulus_t_dependent_field():
    fld = from_expression("-u + cos(2*pi*v) + 0.5*sin(2*pi*t)", alpha=2 * math.pi, beta=5.5, lipschitz_v=2 * math.pi)
    rows = modulus_probe(fld, 2.0, 0.1, [(1e-3, 1e-3), (0.0, 1e-2)])
    assert all(r.holds for r in rows)
    assert rows[1].lhs > 0


def test_modulus_offset_range():
    with pytest.raises(ValueError):
        modulus_probe(EX1, 2.0, 0.0, [(0.5, 0.0)])
    with pytest.raises(ValueError):
        modulus_probe(EX1, 2.0, 0.0, [(0.0, 0.0)])
