import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from homlab import expr
from homlab.expr import BinOp, Call, Const, Neg, Num, Var
from homlab.field import FIELD_VARIABLES, builtin

VARS = ("a", "b", "c")


def test_example1_text_matches_builtin():
    ast = expr.parse("-u + cos(2*pi*v)", FIELD_VARIABLES)
    f = expr.compile_scalar(ast, FIELD_VARIABLES)
    ref = builtin("example1")
    for v, tau, u, t in [(0.1, 0.2, 1.5, 0.0), (0.7, 0.0, -2.0, 3.0), (1.25, 0.0, 0.0, 0.0)]:
        assert f(v, tau, u, t) == pytest.approx(ref(v, tau, u, t), abs=1e-15)


def test_example3_text_matches_builtin():
    ast = expr.parse("abs(v + tau - floor(v + tau) - 0.5) - 1", FIELD_VARIABLES)
    f = expr.compile_scalar(ast, FIELD_VARIABLES)
    ref = builtin("example3")
    rng = np.random.default_rng(1)
    for v, tau in rng.uniform(-3, 3, size=(50, 2)):
        assert f(v, tau, 5.0, 9.0) == pytest.approx(ref(v, tau, 5.0, 9.0), abs=1e-12)


def test_incomplete_expression_offset():
    with pytest.raises(expr.ExprSyntaxError) as info:
        expr.parse("u +", ["u"])
    assert info.value.offset == 3


def test_power_is_right_associative():
    assert expr.evaluate(expr.parse("2^3^2"), {}) == 512


def test_unary_minus_binds_looser_than_power():
    assert expr.evaluate(expr.parse("-2^2"), {}) == -4


def test_functions_and_constants():
    assert expr.evaluate(expr.parse("abs(-3) + min(1,2)"), {}) == 4
    assert expr.evaluate(expr.parse("cos(pi) + log(e)"), {}) == pytest.approx(0.0, abs=1e-15)


def test_division_by_zero_is_domain_error():
    node = expr.parse("1/ (u - u)", ["u"])
    with pytest.raises(expr.DomainError) as info:
        expr.evaluate(node, {"u": 1.0})
    assert isinstance(info.value.node, BinOp)


@pytest.mark.parametrize("source", ["log(0)", "log(-1)", "sqrt(-2)"])
def test_domain_errors(source):
    with pytest.raises(expr.DomainError):
        expr.evaluate(expr.parse(source), {})


def test_array_domain_error_gives_nan():
    f = expr.compile_array(expr.parse("sqrt(u)", ["u"]), ["u"])
    out = f(np.array([4.0, -1.0]))
    assert out[0] == 2.0 and not np.isfinite(out[1])


def test_unknown_identifier_and_arity():
    with pytest.raises(expr.UnknownIdentifier) as info:
        expr.parse("x + 1", ["u"])
    assert info.value.offset == 0
    with pytest.raises(expr.ArityError):
        expr.parse("min(1)")
    with pytest.raises(expr.ArityError):
        expr.parse("sin(1, 2)")


def test_bad_variable_lists():
    with pytest.raises(ValueError):
        expr.parse("u", ["u", "u"])
    with pytest.raises(ValueError):
        expr.parse("1", ["pi"])


def test_printing():
    assert expr.to_text(expr.parse("a+b*c", VARS)) == "(a + (b * c))"
    assert expr.to_text(expr.parse("2.5")) == "2.5"
    assert expr.to_text(expr.parse("a - b - c", VARS)) == "((a - b) - c)"


def test_free_variables():
    assert expr.free_variables(expr.parse("u + cos(2*pi*v)", FIELD_VARIABLES)) == {"u", "v"}


def test_errors_carry_offsets_within_input():
    for source in ["(", "1 +* 2", "sin(", "1 2", "max(1,", "$"]:
        with pytest.raises(expr.ParseError) as info:
            expr.parse(source, VARS)
        assert 0 <= info.value.offset <= len(source)


# -- random ASTs -----------------------------------------------------------

numbers = st.floats(min_value=0, max_value=1e6, allow_nan=False, allow_infinity=False)
leaves = st.one_of(
    numbers.map(Num),
    st.sampled_from(VARS).map(Var),
    st.sampled_from(sorted(expr.CONSTANTS)).map(Const),
)


def _extend(children):
    unary = st.sampled_from([f for f, n in expr.FUNCTIONS.items() if n == 1])
    binary = st.sampled_from([f for f, n in expr.FUNCTIONS.items() if n == 2])
    return st.one_of(
        children.map(Neg),
        st.builds(BinOp, st.sampled_from("+-*/^"), children, children),
        st.builds(lambda f, a: Call(f, (a,)), unary, children),
        st.builds(lambda f, a, b: Call(f, (a, b)), binary, children, children),
    )


asts = st.recursive(leaves, _extend, max_leaves=12)


@given(asts)
def test_round_trip(node):
    assert expr.parse(expr.to_text(node), VARS) == node


@given(asts, st.tuples(*(st.floats(-5, 5) for _ in VARS)))
def test_evaluation_is_pure(node, values):
    bindings = dict(zip(VARS, values))

    def run():
        try:
            return expr.evaluate(node, bindings)
        except (expr.DomainError, OverflowError):
            return "error"

    a, b = run(), run()
    assert a == b or (isinstance(a, float) and math.isnan(a) and math.isnan(b))
