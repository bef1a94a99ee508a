import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from koopman_kernel import expr as ex
from koopman_kernel.errors import (
    DomainError,
    ExpressionSyntaxError,
    IndexOutOfRange,
    UnknownIdentifier,
)


def test_parse_structure():
    assert ex.parse("x1 - x2^2", 2) == ex.Sub(ex.Var(1), ex.Pow(ex.Var(2), ex.Constant(2.0)))
    assert ex.parse("x1 + sin(x2) + x1^3", 2) == ex.Add(
        ex.Add(ex.Var(1), ex.Func("sin", ex.Var(2))), ex.Pow(ex.Var(1), ex.Constant(3.0)))


@pytest.mark.parametrize("text", ["x1 +", "(x1", "x1 x2", "*x1", "sin x1", "x1 ^", ""])
def test_syntax_errors(text):
    with pytest.raises(ExpressionSyntaxError) as err:
        ex.parse(text, 2)
    assert err.value.position >= 0


def test_syntax_error_at_end():
    with pytest.raises(ExpressionSyntaxError) as err:
        ex.parse("x1 +", 2)
    assert err.value.position == len("x1 +")


def test_identifier_errors():
    with pytest.raises(UnknownIdentifier):
        ex.parse("foo(x1)", 2)
    with pytest.raises(UnknownIdentifier):
        ex.parse("y + 1", 2)
    with pytest.raises(IndexOutOfRange):
        ex.parse("x3", 2)
    with pytest.raises(IndexOutOfRange):
        ex.parse("x0", 2)


def test_evaluate_examples():
    assert ex.evaluate(ex.parse("x1 - x2^2", 2), (0.5, 0.5)) == 0.25
    assert ex.evaluate(ex.parse("sin(x2)", 2), (0.0, 0.0)) == 0.0
    with pytest.raises(DomainError):
        ex.evaluate(ex.parse("x1/x2", 2), (1.0, 0.0))
    with pytest.raises(DomainError):
        ex.evaluate(ex.parse("sqrt(x1)", 1), (-1.0,))


def test_precedence():
    assert ex.evaluate(ex.parse("2*x1^2", 1), (3.0,)) == 18.0
    assert ex.evaluate(ex.parse("-x1^2", 1), (2.0,)) == -4.0
    assert ex.evaluate(ex.parse("2^3^2", 1), (0.0,)) == 512.0
    assert ex.evaluate(ex.parse("8 - 3 - 2", 1), (0.0,)) == 3.0
    assert ex.evaluate(ex.parse("x1^-1", 1), (4.0,)) == 0.25


def test_dual_examples():
    v, g = ex.evaluate_dual(ex.parse("x1 - x2^2", 2), (0.5, 0.5))
    assert v == 0.25
    np.testing.assert_array_equal(g, [1.0, -1.0])
    v, g = ex.evaluate_dual(ex.parse("sin(x2)", 2), (0.0, 0.0))
    assert v == 0.0
    np.testing.assert_array_equal(g, [0.0, 1.0])


def test_vectorised_evaluation_matches_scalar():
    e = ex.parse("x1*exp(-x2^2) + tanh(x1) / (2 + cos(x2))", 2)
    X = np.random.default_rng(1).uniform(-2, 2, (50, 2))
    batch = ex.evaluate(e, [X[:, 0], X[:, 1]])
    for row, b in zip(X, batch):
        assert ex.evaluate(e, row) == pytest.approx(b, abs=0, rel=1e-15)


def test_real_exponent_domain():
    e = ex.parse("x1^0.5", 1)
    assert ex.evaluate(e, (4.0,)) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        ex.evaluate(e, (-4.0,))


# ----------------------------------------------------------------------------
# random expressions over the grammar
# ----------------------------------------------------------------------------

leaves = st.one_of(
    st.integers(1, 2).map(ex.Var),
    st.floats(-2, 2, allow_nan=False).map(lambda c: ex.Constant(round(c, 3))),
)


def _extend(children):
    one = children
    two = st.tuples(children, children)
    return st.one_of(
        two.map(lambda t: ex.Add(*t)),
        two.map(lambda t: ex.Sub(*t)),
        two.map(lambda t: ex.Mul(*t)),
        # denominator bounded away from zero
        two.map(lambda t: ex.Div(t[0], ex.Add(ex.Constant(1.5), ex.Mul(t[1], t[1])))),
        one.map(ex.Neg),
        st.tuples(one, st.integers(0, 3)).map(lambda t: ex.Pow(t[0], ex.Constant(float(t[1])))),
        one.map(lambda c: ex.Func("sin", c)),
        one.map(lambda c: ex.Func("cos", c)),
        one.map(lambda c: ex.Func("tanh", c)),
        one.map(lambda c: ex.Func("exp", ex.Func("tanh", c))),
        one.map(lambda c: ex.Func("sqrt", ex.Add(ex.Constant(1.0), ex.Mul(c, c)))),
    )


expressions = st.recursive(leaves, _extend, max_leaves=10)
points = st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))


@settings(max_examples=1000, deadline=None)
@given(expressions, points)
def test_dual_gradient_matches_central_differences(e, x):
    value, grad = ex.evaluate_dual(e, x)
    assume(math.isfinite(value) and np.all(np.isfinite(grad)) and abs(value) < 1e6)
    h = 1e-5
    for j in range(2):
        xp, xm = list(x), list(x)
        xp[j] += h
        xm[j] -= h
        fd = (ex.evaluate(e, xp) - ex.evaluate(e, xm)) / (2 * h)
        assert abs(grad[j] - fd) <= 1e-6 * (1 + abs(grad[j])) + 1e-11 * abs(value) / h


@settings(max_examples=300, deadline=None)
@given(expressions, points)
def test_print_parse_round_trip(e, x):
    again = ex.parse(ex.to_string(e), 2)
    a = ex.evaluate(e, x)
    b = ex.evaluate(again, x)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))
    assert ex.to_string(again) == ex.to_string(e)


@given(expressions)
def test_max_index_bounded_by_dimension(e):
    assert ex.max_index(e) <= 2
