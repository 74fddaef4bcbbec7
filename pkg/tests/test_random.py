import pytest

from corpus import DERIVED
from stosym import ItoSDE, VectorField, make_context
from stosym.ito import ito_determining
from stosym.random import (
    compatibility_residual, delta_random, delta_random_scalar, extended_frame, ito_laplacian,
    random_determining,
)
from stosym.strato import StratSDE, ito_to_strat

ctx = make_context(["x"], params=["k", "s0", "a0", "b0"], functions={"eta": 1, "a": 1, "b": 1, "phi": 3})


def ito(drift, sigma):
    return ItoSDE(ctx, [drift], [[sigma]])


def G(phi, tau=0):
    return VectorField(ctx, tau, [phi])


# ---------------------------------------------------------------- corrected Laplacian

def test_laplacian_kills_functions_of_the_characteristic():
    assert ito_laplacian("eta(x - s0*w)", ito("0", "s0")).iszero


def test_laplacian_of_noise_square():
    assert str(ito_laplacian("w^2", ito("0", "x"))) == "2"


def test_laplacian_cross_term():
    # sigma = x: x^2 phi_xx + phi_ww + 2 x phi_xw
    assert ito_laplacian("x*w", ito("0", "x")) == ctx.parse("2*x")


def test_extended_frame_generator():
    fr = extended_frame(ito("1", "x"))
    assert fr.L(ctx.parse("w")) == ctx.parse("0")
    assert fr.L(ctx.parse("t")) == ctx.parse("1")
    assert [str(h) for h in fr.Yk[0].h] == ["1"]


# ---------------------------------------------------------------- determining equations

def test_exponential_noise_symmetry_of_affine_equation():
    s = ito("1", "x")
    X = G("exp(w - t/2)")
    assert random_determining("ito", s, X).all_zero()
    rs = random_determining("strat", ito_to_strat(s), X)
    assert rs.all_zero()
    assert rs.forms["commutator"].all_zero()


def test_wrong_time_rate_fails():
    s = ito("1", "x")
    assert not random_determining("ito", s, G("exp(w - t)")).all_zero()


def test_derived_random_residuals():
    s = ito("1", "x")
    X = G("exp(w - t/2)")
    got = {
        "ito": [str(e) for e in random_determining("ito", s, X).exprs],
        "strat": [str(e) for e in random_determining("strat", ito_to_strat(s), X).exprs],
    }
    assert got == DERIVED["random_symmetry"]


def test_linear_damped_stratonovich_family():
    s = StratSDE(ctx, ["-x"], [["x"]])
    assert random_determining("strat", s, G("x*eta(x*exp(t - w))")).all_zero()
    assert not random_determining("strat", s, G("exp(-t)*eta(exp(w)/x)")).all_zero()


def test_two_dimensional_multiplicative_system():
    c2 = make_context(["x1", "x2"], noises=["w1", "w2"], params=["al"])
    s = StratSDE(c2, ["-x2", "-x1"], [["al*x1", "0"], ["0", "al*x2"]])
    assert not random_determining("strat", s, VectorField(c2, 0, ["1", "1"])).all_zero()
    # linear in x, so the scaling field is always a symmetry
    assert random_determining("strat", s, VectorField(c2, 0, ["x1", "x2"])).all_zero()
    assert not random_determining("strat", s, VectorField(c2, 0, ["x1", "0"])).all_zero()


def test_exponential_drift_families_coincide():
    s = ito("exp(-k*x)", "1")
    X = G("exp(-k*(x - w))")
    assert random_determining("ito", s, X).all_zero()
    assert random_determining("strat", ito_to_strat(s), X).all_zero()
    assert not random_determining("ito", s, G("exp(-k*(x - w) - k^2*t)")).all_zero()


def test_linear_drift_unit_noise():
    s = ito("a0 + b0*x", "1")
    X = G("exp(b0*t)")
    assert random_determining("ito", s, X).all_zero()
    assert random_determining("strat", ito_to_strat(s), X).all_zero()


def test_quadratic_drift_unit_noise_has_no_affine_symmetry():
    s = ito("x^2", "1")
    for phi in ("1", "x - w", "exp(t)"):
        assert not random_determining("ito", s, G(phi)).all_zero()


@pytest.mark.parametrize("drift, sigma, phi", [
    ("x", "x", "x"), ("a0", "1", "1"), ("0", "s0", "t*x"), ("x^2", "x", "exp(x)"),
])
def test_deterministic_generators_reduce_to_simple_mode(drift, sigma, phi):
    s = ito(drift, sigma)
    X = G(phi)
    assert random_determining("ito", s, X).exprs == ito_determining(s, X, "simple").exprs


def test_mode_and_kind_errors():
    s = ito("1", "x")
    with pytest.raises(ValueError):
        random_determining("ito", s, G("x", tau="1"), "simple")
    with pytest.raises(ValueError):
        random_determining("ito", s, G("x", tau="x"), "fiber")
    with pytest.raises(ValueError):
        random_determining("levy", s, G("x"))
    with pytest.raises(TypeError):
        random_determining("strat", s, G("x"))
    with pytest.raises(ValueError):
        random_determining("ito", s, G("x"), "weak")


# ---------------------------------------------------------------- compatibility and delta

def test_compatibility_for_multiplicative_noise():
    s = ito("0", "x")
    assert compatibility_residual(s, "x*a(t) + exp(-w)*b(t)").iszero
    assert str(compatibility_residual(s, "x^2")) == "3*x^2"


def test_compatibility_for_additive_noise():
    s = ito("0", "1")
    assert compatibility_residual(s, "a(t) + b(t)*(x - w)").iszero


@pytest.mark.parametrize("sigma", ["1", "x", "x^2", "exp(x)"])
def test_delta_identity(sigma):
    res = delta_random_scalar(ito("0", sigma), "phi(x, t, w)")
    assert res.verdict.status == "proven"
    assert res.reduced.iszero
    assert str(res.reduced) == DERIVED["delta_identity"][sigma]


def test_delta_nonzero_off_constraint():
    s = ito("0", "x")
    d = delta_random(s, G("x^2"))[0]
    assert not d.iszero


def test_scalar_only():
    c2 = make_context(["x", "y"])
    with pytest.raises(ValueError):
        compatibility_residual(ItoSDE(c2, ["0", "0"], [["1"], ["1"]]), "x")
