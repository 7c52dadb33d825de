import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ltvcert import expr as ex


@pytest.mark.parametrize("src, t, value", [
    ("2^3^2", 0.0, 512.0),          # right associative
    ("-2^2", 0.0, -4.0),            # unary minus binds looser than ^
    ("-t^2", 3.0, -9.0),
    ("1 - 2 - 3", 0.0, -4.0),
    ("8/4/2", 0.0, 1.0),
    ("2e-3*t", 5.0, 0.01),
    ("min(t, 1) + max(t, 1)", 3.0, 4.0),
    ("abs(-t) * sign(-t)", 2.0, -2.0),
    ("exp(log(t))", 7.5, 7.5),
    ("sqrt(2*(t-1))*exp(-t+0.5)", 3.0, 2.0 * math.exp(-2.5)),
    ("--t", 2.0, 2.0),
])
def test_precedence_and_functions(src, t, value):
    assert ex.evaluate(ex.parse_expr(src), t) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("src, err", [
    ("t(", ex.ExprSyntaxError),
    ("3t", ex.ExprSyntaxError),
    ("", ex.ExprSyntaxError),
    ("(t", ex.ExprSyntaxError),
    ("foo(t)", ex.UnknownIdentifierError),
    ("pi", ex.UnknownIdentifierError),
    ("sin(t, t)", ex.ArityError),
    ("min(t)", ex.ArityError),
])
def test_parse_errors(src, err):
    with pytest.raises(err):
        ex.parse_expr(src)


def test_syntax_error_reports_position():
    with pytest.raises(ex.ExprSyntaxError) as info:
        ex.parse_expr("1 + * t")
    assert info.value.position == 4


@pytest.mark.parametrize("src, t", [("1/t", 0.0), ("log(t)", -1.0), ("sqrt(t)", -4.0),
                                    ("exp(t)", 1e4)])
def test_domain_violations_raise(src, t):
    with pytest.raises(ex.EvaluationError):
        ex.evaluate(ex.parse_expr(src), t)


def test_numbers_accepted_directly():
    assert ex.evaluate(ex.parse_expr(3), 1.0) == 3.0
    with pytest.raises(ex.ExprError):
        ex.parse_expr(True)


def test_vectorised_evaluation_matches_pointwise():
    node = ex.parse_expr("-t*sin(t) + cos(2*t)^2")
    ts = np.linspace(-5, 5, 41)
    vec = ex.evaluate(node, ts)
    assert np.allclose(vec, [ex.evaluate(node, float(t)) for t in ts], rtol=0, atol=0)


def test_reflection_substitutes_minus_t():
    node = ex.parse_expr("t^3 + exp(t)")
    assert ex.evaluate(ex.reflect(node), 2.0) == pytest.approx(-8.0 + math.exp(-2.0))


# -- property: random trees agree with the math module ----------------------------------

_UNARY = {"sin": math.sin, "cos": math.cos, "exp": math.exp, "abs": abs}


def _trees():
    leaves = st.one_of(
        st.just(("t", lambda t: t)),
        st.floats(-3, 3, allow_nan=False).map(lambda c: (repr(c), lambda t, c=c: c)),
    )

    def extend(children):
        binop = st.tuples(st.sampled_from("+-*"), children, children).map(
            lambda x: (f"({x[1][0]}) {x[0]} ({x[2][0]})",
                       {"+": lambda t, a=x[1][1], b=x[2][1]: a(t) + b(t),
                        "-": lambda t, a=x[1][1], b=x[2][1]: a(t) - b(t),
                        "*": lambda t, a=x[1][1], b=x[2][1]: a(t) * b(t)}[x[0]]))
        unary = st.tuples(st.sampled_from(sorted(_UNARY)), children).map(
            lambda x: (f"{x[0]}({x[1][0]})", lambda t, f=_UNARY[x[0]], a=x[1][1]: f(a(t))))
        return st.one_of(binop, unary)

    return st.recursive(leaves, extend, max_leaves=8)


@given(_trees(), st.floats(-2, 2))
def test_random_trees_match_reference(tree, t):
    src, ref = tree
    try:
        expected = ref(t)
    except OverflowError:
        with pytest.raises(ex.EvaluationError):
            ex.evaluate(ex.parse_expr(src), t)
        return
    if not math.isfinite(expected):
        return
    assert ex.evaluate(ex.parse_expr(src), t) == pytest.approx(expected, rel=1e-12, abs=1e-12)


@given(_trees(), st.floats(-2, 2))
def test_to_source_round_trip(tree, t):
    node = ex.parse_expr(tree[0])
    again = ex.parse_expr(ex.to_source(node))
    try:
        a = ex.evaluate(node, t)
    except ex.EvaluationError:
        with pytest.raises(ex.EvaluationError):
            ex.evaluate(again, t)
        return
    assert ex.evaluate(again, t) == a
