import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from corpus import CTX, expressions, small_rationals
from stosym import Context, differentiate, evaluate, is_zero, normalize, parse, substitute, to_str
from stosym.expr import (
    AFn, AllSamplesSingular, Expr, ParseError, UnboundSymbol, UndeclaredIdentifier, ZeroPolicy, const,
    exp, sin, sym,
)

ctx = Context(states=("x", "y"), time="t", noises=("w",), params=("k", "s0"), functions={"f": 1, "g": 1})


def P(s):
    return parse(s, ctx)


# ---------------------------------------------------------------- parsing and printing

def test_zero_constant():
    assert P("0").iszero
    assert P("0") == const(0)


def test_product_with_power():
    e = P("-k^2*y")
    (mono, coef), = e.terms.items()
    assert coef == -1
    assert str(e) == "-k^2*y"


def test_sqrt_argument_kept():
    e = P("sqrt(2*k^2)")
    assert str(e) == "sqrt(2*k^2)"


def test_undeclared_identifier_is_named():
    with pytest.raises(UndeclaredIdentifier, match="z"):
        P("x + z")


def test_syntax_error_has_position():
    with pytest.raises(ParseError) as info:
        P("x + * y")
    assert "column" in str(info.value) or "col" in str(info.value)


def test_unbalanced_parentheses():
    with pytest.raises(ParseError):
        P("(x + y")


# ---------------------------------------------------------------- normalization

@pytest.mark.parametrize("src, expected", [
    ("x*2 + x", "3*x"),
    ("(x+1)^2 - x^2 - 2*x - 1", "0"),
    ("sin(x)*exp(t) + exp(t)*sin(x)", "2*exp(t)*sin(x)"),
    ("x/x", "1"),
    ("(x*y)^(1/2)", None),
])
def test_normalize_examples(src, expected):
    e = P(src)
    if expected is not None:
        assert e == P(expected)
        assert str(e) == expected
    assert normalize(e) == e


def test_commutative_atoms_merge():
    e = P("sin(x)*exp(t) + exp(t)*sin(x)")
    assert len(e.terms) == 1
    assert list(e.terms.values()) == [2]


# ---------------------------------------------------------------- differentiation

@pytest.mark.parametrize("src, var, expected", [
    ("x^2*t", "x", "2*x*t"),
    ("x - s0*w", "w", "-s0"),
    ("exp(-k^2*t)", "t", "-k^2*exp(-k^2*t)"),
    ("log(x)", "x", "1/x"),
    ("sqrt(x)", "x", "1/(2*sqrt(x))"),
    ("x*y", "w", "0"),
])
def test_differentiate_examples(src, var, expected):
    assert differentiate(P(src), var) == P(expected)


def test_abstract_derivative_order():
    d = differentiate(P("f(t)"), "t")
    (mono, _), = d.terms.items()
    atom = mono[0][0]
    assert isinstance(atom, AFn) and atom.orders == (1,)
    assert str(d) == "f'(t)"


def test_abstract_chain_rule():
    assert differentiate(P("f(x*t)"), "x") == P("t*f'(x*t)")


# ---------------------------------------------------------------- substitution

def test_substitute_simultaneous():
    assert substitute(P("x + y"), {"x": 0}) == P("y")
    assert substitute(P("x*y"), {"x": P("y"), "y": P("x")}) == P("x*y")


def test_substitute_onshell_step():
    # second-order equation x^2 u'' + x u' + u = 0 solved for u''
    e = substitute(P("x^2*y + x*t + 1"), {"y": P("-(x*t + 1)/x^2")})
    assert e.iszero


# ---------------------------------------------------------------- evaluation

def test_evaluate_examples():
    assert evaluate(P("x^2"), {"x": 3}) == 9
    assert evaluate(P("exp(-k^2*t)"), {"k": 1, "t": 0}) == 1
    assert evaluate(P("x^2/3"), {"x": Fraction(1, 2)}, mode="exact") == Fraction(1, 12)


def test_rotation_diffusion_is_orthogonal():
    e = P("cos(t)^2 + sin(t)^2")
    assert math.isclose(evaluate(e, {"t": 0.7}), 1.0, rel_tol=0, abs_tol=1e-15)


def test_domain_violation_is_not_finite():
    v = evaluate(P("log(x)"), {"x": -1.0})
    assert not np.isfinite(v)


def test_unbound_symbol():
    with pytest.raises(UnboundSymbol):
        evaluate(P("x + y"), {"x": 1.0})


# ---------------------------------------------------------------- zero testing

def test_is_zero_structural():
    assert is_zero(P("(x+1)^2 - x^2 - 2*x - 1")).proven


def test_is_zero_witness():
    v = is_zero(P("x - y"))
    assert not v
    assert v.status == "nonzero"
    assert set(v.witness) >= {"x", "y"}


def test_is_zero_numeric_for_transcendental_identity():
    v = is_zero(P("sin(x)^2 + cos(x)^2 - 1"))
    assert v and v.status in ("proven", "numeric")


def test_is_zero_reproducible():
    pol = ZeroPolicy(seed=7)
    a, b = is_zero(P("x - y"), pol), is_zero(P("x - y"), pol)
    assert a.witness == b.witness


def test_all_samples_singular():
    pol = ZeroPolicy(domains={"x": (-2.0, -1.0)})
    with pytest.raises(AllSamplesSingular):
        is_zero(P("log(x) - 1"), pol)


# ---------------------------------------------------------------- properties

PROP = settings(max_examples=1000, deadline=None, suppress_health_check=list(HealthCheck))


@PROP
@given(expressions())
def test_normalize_idempotent(e):
    assert normalize(normalize(e)) == normalize(e)


@settings(max_examples=200, deadline=None, suppress_health_check=list(HealthCheck))
@given(expressions(), expressions(), small_rationals, small_rationals, st.sampled_from(["x", "y", "t", "w"]))
def test_differentiation_linear(e1, e2, a, b, v):
    lhs = differentiate(const(a) * e1 + const(b) * e2, v)
    rhs = const(a) * differentiate(e1, v) + const(b) * differentiate(e2, v)
    assert lhs == rhs


@settings(max_examples=200, deadline=None, suppress_health_check=list(HealthCheck))
@given(expressions(), st.sampled_from(["x", "y", "t", "w"]), st.sampled_from(["x", "y", "t", "w"]))
def test_clairaut(e, u, v):
    assert differentiate(differentiate(e, u), v) == differentiate(differentiate(e, v), u)


@settings(max_examples=200, deadline=None, suppress_health_check=list(HealthCheck))
@given(expressions(smooth=True, max_leaves=6), st.sampled_from(["x", "y", "t", "w"]),
       st.integers(0, 2**32 - 1))
def test_derivative_matches_central_difference(e, v, seed):
    rng = np.random.default_rng(seed)
    d = differentiate(e, v)
    h = 1e-6
    for _ in range(16):
        pt = {n: float(rng.uniform(0.5, 2.0)) for n in ("x", "y", "t", "w", "k")}
        up, dn = dict(pt), dict(pt)
        up[v] += h
        dn[v] -= h
        fd = (float(evaluate(e, up)) - float(evaluate(e, dn))) / (2 * h)
        val = float(evaluate(d, pt))
        if not (np.isfinite(fd) and np.isfinite(val)):
            continue
        assert abs(val - fd) <= 1e-5 * (1 + abs(val))


@PROP
@given(expressions())
def test_print_parse_round_trip(e):
    assert parse(to_str(e), CTX) == e


def test_structural_tree_is_canonical():
    a = sym("x") * exp(sym("t", "time")) + sin(sym("y"))
    b = sin(sym("y")) + exp(sym("t", "time")) * sym("x")
    assert a.tree() == b.tree()
    assert isinstance(a, Expr)
