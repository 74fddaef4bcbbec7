"""The implementation against the frozen values of the independent sympy oracle
(tools/oracle_derived.py -> tests/data/derived.json)."""

import pytest

from corpus import DERIVED, abstract_scalar, brownian, golden_pairs, kramers
from stosym import Ansatz, ItoSDE, VectorField, lie_bracket, make_context, solve_symmetries
from stosym.expr import is_zero
from stosym.ito import fp_coefficients, ito_determining
from stosym.strato import ito_to_strat, strat_determining


def native(s: str) -> str:
    return s.replace("**", "^").replace("Derivative(g(t), t)", "g'(t)")


def same(ctx, got, ref: str) -> bool:
    return bool(is_zero(got - ctx.parse(native(ref))))


@pytest.mark.parametrize("name", ["V1", "V2", "V3", "V5", "V6"])
def test_kramers_residuals(name):
    s = kramers()
    fields = {
        "V1": (1, ["0", "0"]), "V2": (0, ["1", "0"]),
        "V3": (0, ["exp(-k^2*t)/k^2", "-exp(-k^2*t)"]),
        "V5": (0, ["t", "1"]), "V6": (0, ["exp(k^2*t)/k^2", "exp(k^2*t)"]),
    }
    tau, xi = fields[name]
    rs = ito_determining(s, VectorField(s.ctx, tau, xi), "fiber")
    ref = DERIVED["kramers_residuals"][name]
    assert len(rs.exprs) == len(ref)
    assert all(same(s.ctx, e, r) for e, r in zip(rs.exprs, ref))


@pytest.mark.parametrize("name", ["linear", "quadratic"])
def test_scalar_simple_dimensions(name):
    ref = DERIVED["scalar_simple_dimensions"][name]
    ctx = make_context(["x"])
    ito = ItoSDE(ctx, ["x" if name == "linear" else "x^2"], [["x"]])
    strat = ito_to_strat(ito)
    assert same(ctx, strat.b[0], ref["strat_drift"])
    monos = ["1", "x", "t", "x*t", "x^2", "t^2", "x^2*t", "x*t^2", "x^3", "t^3"]
    A = Ansatz(ctx, xi=[monos])
    assert solve_symmetries(ito, "simple", A).dimension == ref["ito"]
    assert solve_symmetries(strat, "misawa-simple", A).dimension == ref["strat"]


def test_brownian_algebra():
    s = brownian()
    ref = DERIVED["brownian_algebra"]
    assert solve_symmetries(s, "fiber", Ansatz(s.ctx, ["1", "t"], [["1", "x", "t", "x*t"]])).dimension \
        == ref["dimension"]
    assert solve_symmetries(s, "fiber", Ansatz(s.ctx, ["1"], [["1", "x"]])).dimension == ref["nested_dimension"]


def test_fp_coefficients_of_ou():
    ctx = make_context(["y"], params=["k"])
    s = ItoSDE(ctx, ["-k^2*y"], [["sqrt(2*k^2)"]])
    c = fp_coefficients(s)
    ref = DERIVED["fp_ou"]
    assert same(ctx, c.A[0][0], ref["A"])
    assert same(ctx, c.B[0], ref["B"])
    assert same(ctx, c.C, ref["C"])


def test_abstract_brackets():
    ref = DERIVED["abstract_brackets"]
    fields = {n.split("/")[1]: X for n, _, X in golden_pairs() if n.startswith("abstract/")}
    s = abstract_scalar()
    X1, X2, X3 = fields["X1"], fields["X2"], fields["X3"]
    b12 = lie_bracket(X1, X2)
    assert [str(v) for v in (b12.tau,) + b12.xi] == ref["X1X2"]
    b13 = lie_bracket(X1, X3)
    for got, base, r in zip((b13.tau,) + b13.xi, (X1.tau,) + X1.xi, ref["X1X3_over_X1"]):
        assert same(s.ctx, got - base * s.ctx.parse(r), "0")
    b23 = lie_bracket(X2, X3)
    assert str(b23.tau) == ref["X2X3_over_X2"][0]
    assert same(s.ctx, b23.xi[0], ref["X2X3_over_X2"][1])
    for name, X in fields.items():
        rs = ito_determining(s, X, "fiber")
        assert len(rs.exprs) == len(ref[f"{name}_residuals"])
        assert all(same(s.ctx, e, r) for e, r in zip(rs.exprs, ref[f"{name}_residuals"]))


def test_misawa_strong_conservation():
    ref = DERIVED["strong_conservation"]
    assert set(ref.values()) == {"0"}
    ctx = make_context(["x", "y", "z"])
    from stosym.strato import StratSDE, strongly_conserved
    s = StratSDE(ctx, ["-(y - z)", "-(z - x)", "-(x - y)"], [["z - y"], ["x - z"], ["y - x"]])
    assert strongly_conserved(s, "x^2 + y^2 + z^2").proven_zero
    X = VectorField(ctx, 0, ["(x^2 + y^2 + z^2)/2"] * 3)
    assert strat_determining(s, X, "misawa-simple").proven_zero
