"""The twelve acceptance criteria, each at its stated tolerance.

Every criterion records a one-line PASS/FAIL summary; conftest.py prints them
at the end of the run, and ``python tests/test_acceptance.py`` prints them
directly.
"""

import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from corpus import brownian, golden_pairs, kramers  # noqa: E402
from stosym import (  # noqa: E402
    Ansatz, ItoSDE, VectorField, ito_change_of_variables, ito_determining, make_context,
    solve_symmetries,
)
from stosym.expr import ZeroPolicy, is_zero, normalize  # noqa: E402
from stosym.fields import SecondOrderODE, hojman_charge  # noqa: E402
from stosym.ito import fp_determining  # noqa: E402
from stosym.random import delta_random_scalar, random_determining  # noqa: E402
from stosym.reduce import kozlov_condition, linearize  # noqa: E402
from stosym.sim import SimConfig, conserved_drift, moment_agreement, simulate  # noqa: E402
from stosym.solve import polynomial_basis, rref  # noqa: E402
from stosym.strato import StratSDE, ito_to_strat, strat_to_ito, strongly_conserved  # noqa: E402

RESULTS: dict = {}


def record(n: int, ok: bool, detail: str) -> bool:
    RESULTS[n] = (bool(ok), detail)
    return ok


def line(n: int) -> str:
    ok, detail = RESULTS[n]
    return f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}: {detail}"


def summary_lines() -> list:
    return [line(n) for n in sorted(RESULTS)]


# ---------------------------------------------------------------- 1

def criterion_1():
    s = brownian()
    b = solve_symmetries(s, "fiber", Ansatz(s.ctx, ["1", "t"], [["1", "x", "t", "x*t"]]))
    # expected span in the ansatz coordinates (tau:1, tau:t, xi:1, xi:x, xi:t, xi:xt)
    expected = rref([[1, 0, 0, 0, 0, 0], [0, 0, 1, 0, 0, 0], [0, 2, 0, 1, 0, 0]])[0]
    ok = b.dimension == 3 and b.exact and rref(b.rref)[0] == expected
    return record(1, ok, f"Brownian fiber algebra dimension {b.dimension}, exact={b.exact}, "
                         f"span {'matches' if ok else 'differs from'} {{dt, dx, 2t dt + x dx}}")


# ---------------------------------------------------------------- 2

def criterion_2():
    s = kramers()
    pol = ZeroPolicy(samples=32, tol=1e-9)
    good = [VectorField(s.ctx, 1, ["0", "0"]), VectorField(s.ctx, 0, ["1", "0"]),
            VectorField(s.ctx, 0, ["exp(-k^2*t)/k^2", "-exp(-k^2*t)"])]
    zeros = all(ito_determining(s, X, "fiber").all_zero(pol) for X in good)
    worst = []
    for xi in (["t", "1"], ["exp(k^2*t)/k^2", "exp(k^2*t)"]):
        vs = [v for _, v in ito_determining(s, VectorField(s.ctx, 0, xi), "fiber").verdicts(pol)]
        worst.append(max(v.max_abs for v in vs))
    ok = zeros and all(w > 1e-3 for w in worst)
    return record(2, ok, f"V1-V3 all zero={zeros}; max |residual| of V5, V6 = {worst[0]:.3g}, {worst[1]:.3g}")


# ---------------------------------------------------------------- 3

def _random_sde(rng: random.Random) -> ItoSDE:
    n, m = rng.randint(1, 3), rng.randint(1, 3)
    names = ("x", "y", "z")[:n]
    ctx = make_context(names, noises=[f"w{k + 1}" for k in range(m)])
    basis = polynomial_basis(ctx, list(names), 2)

    def poly():
        e = basis[0] * 0
        for b in basis:
            e = e + b * rng.randint(-3, 3)
        return e

    sig = [[poly() for _ in range(m)] for _ in range(n)]
    if all(v.iszero for r in sig for v in r):
        sig[0][0] = sig[0][0] + 1
    return ItoSDE(ctx, [poly() for _ in range(n)], sig)


def criterion_3():
    rng = random.Random(42)
    trips = 0
    for _ in range(10):
        s = _random_sde(rng)
        back = strat_to_ito(ito_to_strat(s))
        trips += back.f == s.f and back.sigma == s.sigma
    ctx = make_context(["x1", "x2", "x3"])
    mis = StratSDE(ctx, ["x3 - x2", "x1 - x3", "x2 - x1"], [["x3 - x2"], ["x1 - x3"], ["x2 - x1"]])
    f1 = strat_to_ito(mis).f[0]
    target = normalize(ctx.parse("(3*x3 - x2 - 2*x1)/2"))
    ok = trips == 10 and f1 == target
    return record(3, ok, f"{trips}/10 exact round trips; Ito drift f1 = {f1}")


# ---------------------------------------------------------------- 4

def criterion_4():
    ctx = make_context(["x"], functions={"phi": 3})
    got = {}
    for sigma in ("1", "x", "x^2", "exp(x)"):
        got[sigma] = delta_random_scalar(ItoSDE(ctx, ["0"], [[sigma]]), "phi(x, t, w)").verdict.status
    ok = all(v == "proven" for v in got.values())
    return record(4, ok, "reduced delta status " + ", ".join(f"sigma={k}: {v}" for k, v in got.items()))


# ---------------------------------------------------------------- 5

def criterion_5():
    ctx = make_context(["x"])
    monos = ["1", "x", "t", "x*t", "x^2", "t^2", "x^2*t", "x*t^2", "x^3", "t^3"]
    A = Ansatz(ctx, xi=[monos])
    dims = {}
    for name, drift in (("linear", "x"), ("quadratic", "x^2")):
        ito = ItoSDE(ctx, [drift], [["x"]])
        dims[name] = (solve_symmetries(ito, "simple", A).dimension,
                      solve_symmetries(ito_to_strat(ito), "misawa-simple", A).dimension)
    lin = solve_symmetries(ItoSDE(ctx, ["x"], [["x"]]), "simple", A)
    ok = dims["linear"] == (1, 1) and dims["quadratic"] == (0, 0) and str(lin.fields[0]) == "(x)*dx"
    return record(5, ok, f"(Ito, Strat) dimensions: sigma=x drift x {dims['linear']}, drift x^2 {dims['quadratic']}")


# ---------------------------------------------------------------- 6

def criterion_6():
    abstract = ItoSDE(make_context(["x"], functions={"f": 1, "g": 1}), ["f(t)"], [["g(t)"]])
    quad = ItoSDE(make_context(["x"]), ["x^2"], [["1"]])
    ka, kq = kozlov_condition(abstract), kozlov_condition(quad)
    ok = ka.holds and not kq.holds and kq.residual.is_const and str(kq.residual) == "-2"
    return record(6, ok, f"abstract residual {ka.residual}; (x^2, 1) residual {kq.residual}")


# ---------------------------------------------------------------- 7

def criterion_7():
    s = ItoSDE(make_context(["x"]), ["x/2"], [["x"]])
    lin = linearize(s)
    out = ito_change_of_variables(s, [lin.phi], {"x": "exp(y)"}, make_context(["y"]))
    ok_gbm = lin.mu.iszero and str(lin.phi) == "log(x)" and out.f[0].iszero and str(out.sigma[0][0]) == "1"
    actx = make_context(["x"], functions={"f": 1, "g": 1})
    a = ItoSDE(actx, ["f(t)"], [["g(t)"]])
    la = linearize(a)
    new = make_context(["y"], functions={"f": 1, "g": 1})
    ta = ito_change_of_variables(a, [la.phi], {"x": "y + int(f(t), t)"}, new, s="int(g(t)^2, t)")
    ok_abs = (is_zero(la.phi - actx.parse("x - int(f(t), t)")).proven and ta.f[0].iszero
              and str(ta.sigma[0][0]) == "1")
    return record(7, ok_gbm and ok_abs,
                  f"x/2 drift: mu={lin.mu}, map {lin.phi}, image dy = {out.f[0]} dt + {out.sigma[0][0]} dw; "
                  f"abstract: map {la.phi}, image after time change dy = {ta.f[0]} ds + {ta.sigma[0][0]} dw(s)")


# ---------------------------------------------------------------- 8

def criterion_8():
    ctx = make_context(["x", "y", "z"])
    s = StratSDE(ctx, ["-(y - z)", "-(z - x)", "-(x - y)"], [["z - y"], ["x - z"], ["y - x"]])
    sym = strongly_conserved(s, "x^2 + y^2 + z^2").proven_zero
    ens = simulate(s, SimConfig(1e-3, 1.0, 256, [1.0, 0.5, -0.3], seed=42, scheme="stratonovich-heun"))
    drift = conserved_drift(ens, "x^2 + y^2 + z^2", ctx)["max_relative_drift"]
    return record(8, sym and drift < 1e-2, f"X0(J) = X1(J) = 0 proven={sym}; Monte Carlo max drift {drift:.3g}")


# ---------------------------------------------------------------- 9

def criterion_9():
    ctx = make_context(["x"])
    s = ItoSDE(ctx, ["1"], [["x"]])
    G = VectorField(ctx, 0, ["exp(w - t/2)"])
    a = random_determining("ito", s, G, "simple").all_zero()
    b = random_determining("strat", ito_to_strat(s), G, "simple").all_zero()
    return record(9, a and b, f"exp(w - t/2): Ito all-zero={a}, Stratonovich all-zero={b}")


# ---------------------------------------------------------------- 10

def criterion_10():
    ctx = make_context(["r", "th"], noises=(), params=["om"], velocities=["rd", "thd"])
    ode = SecondOrderODE(ctx, ("-om^2*r + r*thd^2", "-2*rd*thd/r"))
    res = hojman_charge(ode, ("r^3*thd", "0"), "r^2")
    ok = res.J == ctx.parse("6*r^2*thd") and res.conservation.all_zero()
    return record(10, ok, f"J = {res.J}; on-shell D_t J zero={res.conservation.all_zero()}")


# ---------------------------------------------------------------- 11

def criterion_11():
    failures = [n for n, s, X in golden_pairs()
                if ito_determining(s, X, "fiber").all_zero() and not fp_determining(s, X).all_zero()]
    return record(11, not failures, f"{len(golden_pairs())} symmetry/equation pairs, FP failures: {failures or 'none'}")


# ---------------------------------------------------------------- 12

def criterion_12():
    out = []
    ctx = make_context(["x"])
    cases = [(ItoSDE(ctx, ["x"], [["x"]]), [1.0]), (kramers(bound=True), [0.0, 0.0])]
    for s, x0 in cases:
        a = simulate(s, SimConfig(1e-3, 1.0, 4096, x0, seed=42))
        b = simulate(ito_to_strat(s), SimConfig(1e-3, 1.0, 4096, x0, seed=43, scheme="stratonovich-heun"))
        out.append(moment_agreement(a, b, k=5)["ok"])
    return record(12, all(out), f"moments within 5 SE: geometric motion={out[0]}, Kramers={out[1]}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11, criterion_12]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i + 1}" for i in range(12)])
def test_acceptance(criterion):
    ok = criterion()
    n = CRITERIA.index(criterion) + 1
    print(line(n))
    assert ok, RESULTS[n][1]


if __name__ == "__main__":
    for c in CRITERIA:
        c()
    print("\n".join(summary_lines()))
    sys.exit(0 if all(ok for ok, _ in RESULTS.values()) else 1)
