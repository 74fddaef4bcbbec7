"""Shared test material: reference equations, their known generators, and
a hypothesis strategy producing random expressions."""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

from hypothesis import strategies as st

from stosym import ItoSDE, VectorField, make_context
from stosym.expr import const, cos, exp, log, sin, sqrt, sym

ROOT = Path(__file__).resolve().parents[1]
SPECS = ROOT / "specs"
GOLDEN = Path(__file__).resolve().parent / "golden"
DERIVED = json.loads((Path(__file__).resolve().parent / "data" / "derived.json").read_text())


# ---------------------------------------------------------------- reference equations

def brownian(bound: bool = False):
    ctx = make_context(["x"], params=["s0"], bindings={"s0": Fraction(3, 2)} if bound else None)
    return ItoSDE(ctx, ["0"], [["s0"]])


def kramers(bound: bool = False):
    ctx = make_context(["x", "y"], params=["k"], bindings={"k": 1} if bound else None)
    return ItoSDE(ctx, ["y", "-k^2*y"], [["0"], ["sqrt(2*k^2)"]])


def gbm(drift: str = "x"):
    ctx = make_context(["x"])
    return ItoSDE(ctx, [drift], [["x"]])


def abstract_scalar():
    ctx = make_context(["x"], functions={"f": 1, "g": 1})
    return ItoSDE(ctx, ["f(t)"], [["g(t)"]])


def linear2d():
    ctx = make_context(["x1", "x2"], noises=["w1", "w2"], params=["a1", "a2", "S11", "S12", "S21", "S22"])
    return ItoSDE(ctx, ["a1 + x2", "a2"], [["S11", "S12"], ["S21", "S22"]])


def golden_pairs():
    """(name, sde, generator) for every known fiber-preserving symmetry."""
    out = []
    s = brownian()
    for name, tau, xi in (("V1", "1", ["0"]), ("V2", "0", ["1"]), ("V3", "2*t", ["x"])):
        out.append((f"brownian/{name}", s, VectorField(s.ctx, tau, xi)))
    s = kramers()
    for name, tau, xi in (("V1", "1", ["0", "0"]), ("V2", "0", ["1", "0"]),
                          ("V3", "0", ["exp(-k^2*t)/k^2", "-exp(-k^2*t)"])):
        out.append((f"kramers/{name}", s, VectorField(s.ctx, tau, xi)))
    s = gbm()
    out.append(("gbm/scale", s, VectorField(s.ctx, 0, ["x"])))
    out.append(("gbm/time", s, VectorField(s.ctx, 1, ["0"])))
    s = gbm("x/2")
    out.append(("gbm_half/scale", s, VectorField(s.ctx, 0, ["x"])))
    s = abstract_scalar()
    G = "int(g(t)^2, t)"
    for name, tau, xi in (("X1", "g(t)^(-2)", ["f(t)*g(t)^(-2)"]), ("X2", "0", ["1"]),
                          ("X3", f"2*{G}*g(t)^(-2)", [f"2*{G}*f(t)*g(t)^(-2) + x - int(f(t), t)"])):
        out.append((f"abstract/{name}", s, VectorField(s.ctx, tau, xi)))
    s = linear2d()
    out.append(("linear2d/X", s, VectorField(s.ctx, 0, ["t", "1"])))
    out.append(("linear2d/shift", s, VectorField(s.ctx, 0, ["1", "0"])))
    return out


# ---------------------------------------------------------------- random expressions

STATES = ("x", "y")
CTX = make_context(STATES, noises=["w"], params=["k"])
LEAVES = [sym("x"), sym("y"), sym("t", "time"), sym("w", "noise"), sym("k", "param")]

small_rationals = st.builds(Fraction, st.integers(-5, 5), st.integers(1, 4))


def _leaf():
    return st.one_of(st.sampled_from(LEAVES), small_rationals.map(const))


def _grow(children, smooth: bool):
    binary = st.tuples(children, children)
    unary = [
        binary.map(lambda p: p[0] + p[1]),
        binary.map(lambda p: p[0] - p[1]),
        binary.map(lambda p: p[0] * p[1]),
        st.tuples(children, st.integers(0, 3)).map(lambda p: p[0] ** p[1]),
        children.map(exp),
        children.map(sin),
        children.map(cos),
        children.map(lambda e: const(1) / (1 + e * e)),
        children.map(lambda e: sqrt(1 + e * e)),
        children.map(lambda e: log(2 + e * e)),
    ]
    if not smooth:
        unary.append(st.tuples(children, st.integers(-2, -1)).map(lambda p: p[0] ** p[1]
                                                                   if not p[0].iszero else p[0]))
    return st.one_of(*unary)


def expressions(smooth: bool = False, max_leaves: int = 8):
    return st.recursive(_leaf(), lambda c: _grow(c, smooth), max_leaves=max_leaves)


def polynomials(names=STATES, degree: int = 2):
    """Random polynomial in the given state names and t."""
    monos = [()]
    for _ in range(degree):
        monos = sorted({tuple(sorted(m + (v,))) for m in monos for v in names + ("t",)} | set(monos))

    def build(coeffs):
        out = const(0)
        for m, c in zip(monos, coeffs):
            term = const(c)
            for v in m:
                term = term * (sym("t", "time") if v == "t" else sym(v))
            out = out + term
        return out

    return st.lists(st.integers(-3, 3), min_size=len(monos), max_size=len(monos)).map(build)
