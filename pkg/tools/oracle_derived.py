"""Independent sympy oracle for the derived reference values.

Everything here is computed from first principles with sympy and does not
import stosym.  Symmetry conditions are obtained by pushing the equation
through the infinitesimal map x -> x + eps*xi, t -> t + eps*tau(t) with the
Ito (or Stratonovich) chain rule and keeping the O(eps) part, rather than by
coding the determining equations directly.

Run once; the output tests/data/derived.json is then frozen.
"""

from __future__ import annotations

import json
import pathlib

import sympy as sp

OUT = pathlib.Path(__file__).resolve().parents[1] / "tests" / "data" / "derived.json"

t, w, eps = sp.symbols("t w epsilon")


# ---------------------------------------------------------------- symmetry conditions

def ito_conditions(xs, f, S, xi, tau):
    """O(eps) mismatch between the transformed equation and the original one.

    y = x + eps xi(x,t), s = t + eps tau(t); the new Brownian motion is
    rescaled by sqrt(ds/dt) so the diffusion picks up 1/sqrt(1 + eps tau').
    """
    n, m = len(xs), len(S[0])
    D = sp.Matrix(S) * sp.Matrix(S).T
    sdot = 1 + eps * sp.diff(tau, t)
    shift = {x: x + eps * c for x, c in zip(xs, xi)}
    shift[t] = t + eps * tau
    out = []
    for i in range(n):
        y = xs[i] + eps * xi[i]
        gen = sp.diff(y, t) + sum(f[j] * sp.diff(y, xs[j]) for j in range(n))
        gen += sp.Rational(1, 2) * sum(D[j, k] * sp.diff(y, xs[j], xs[k]) for j in range(n) for k in range(n))
        new = gen / sdot - f[i].subs(shift, simultaneous=True)
        out.append(sp.simplify(sp.diff(new, eps).subs(eps, 0)))
    for i in range(n):
        y = xs[i] + eps * xi[i]
        for k in range(m):
            new = sum(S[j][k] * sp.diff(y, xs[j]) for j in range(n)) / sp.sqrt(sdot)
            new -= S[i][k].subs(shift, simultaneous=True)
            out.append(sp.simplify(sp.diff(new, eps).subs(eps, 0)))
    return out


def strat_simple_conditions(xs, b, S, xi):
    n, m = len(xs), len(S[0])
    shift = {x: x + eps * c for x, c in zip(xs, xi)}
    out = []
    for i in range(n):
        y = xs[i] + eps * xi[i]
        new = sp.diff(y, t) + sum(b[j] * sp.diff(y, xs[j]) for j in range(n)) - b[i].subs(shift, simultaneous=True)
        out.append(sp.simplify(sp.diff(new, eps).subs(eps, 0)))
    for i in range(n):
        y = xs[i] + eps * xi[i]
        for k in range(m):
            new = sum(S[j][k] * sp.diff(y, xs[j]) for j in range(n)) - S[i][k].subs(shift, simultaneous=True)
            out.append(sp.simplify(sp.diff(new, eps).subs(eps, 0)))
    return out


def random_conditions(x, f, s, phi, calculus):
    """Scalar, simple random generator phi(x,t,w) d/dx."""
    shift = {x: x + eps * phi}
    y = x + eps * phi
    if calculus == "ito":
        drift = (sp.diff(y, t) + f * sp.diff(y, x) + sp.Rational(1, 2) * (
            s ** 2 * sp.diff(y, x, 2) + 2 * s * sp.diff(y, x, w) + sp.diff(y, w, 2)))
    else:
        drift = sp.diff(y, t) + f * sp.diff(y, x)
    diff = s * sp.diff(y, x) + sp.diff(y, w)
    return [sp.simplify(sp.diff(e - c.subs(shift), eps).subs(eps, 0))
            for e, c in ((drift, f), (diff, s))]


def ansatz_dimension(conditions, coeffs, variables):
    """Dimension of the coefficient space solving all conditions identically."""
    eqs = []
    for c in conditions:
        num = sp.numer(sp.together(sp.expand(c)))
        if num == 0:
            continue
        eqs += sp.Poly(sp.expand(num), *variables).coeffs()
    if not eqs:
        return len(coeffs)
    A = sp.Matrix([[sp.diff(e, c) for c in coeffs] for e in eqs])
    return len(coeffs) - A.rank()


def poly_ansatz(prefix, monomials):
    cs = sp.symbols(f"{prefix}0:{len(monomials)}")
    return cs, sum(c * mnm for c, mnm in zip(cs, monomials))


# ---------------------------------------------------------------- values

def brownian_algebra():
    x, s0 = sp.symbols("x s0", positive=True)
    ct, tau = poly_ansatz("a", [1, t])
    cx, xi = poly_ansatz("b", [1, x, t, x * t])
    conds = ito_conditions([x], [sp.Integer(0)], [[s0]], [xi], tau)
    dim = ansatz_dimension(conds, list(ct) + list(cx), [x, t])
    nested = ansatz_dimension(ito_conditions([x], [sp.Integer(0)], [[s0]], [cx[0] + cx[1] * x], ct[0]),
                              [ct[0], cx[0], cx[1]], [x, t])
    return {"dimension": dim, "nested_dimension": nested}


def scalar_simple_dimensions():
    x = sp.symbols("x")
    monos = [1, x, t, x * t, x ** 2, t ** 2, x ** 2 * t, x * t ** 2, x ** 3, t ** 3]
    cs, xi = poly_ansatz("c", monos)
    out = {}
    for name, f in (("linear", x), ("quadratic", x ** 2)):
        s = x
        ito = ito_conditions([x], [f], [[s]], [xi], sp.Integer(0))
        b = f - sp.Rational(1, 2) * s * sp.diff(s, x)
        strat = strat_simple_conditions([x], [b], [[s]], [xi])
        out[name] = {"ito": ansatz_dimension(ito, cs, [x, t]),
                     "strat": ansatz_dimension(strat, cs, [x, t]),
                     "strat_drift": str(sp.expand(b))}
    return out


def kramers():
    x, y, k = sp.symbols("x y k", positive=True)
    f = [y, -k ** 2 * y]
    S = [[sp.Integer(0)], [sp.sqrt(2 * k ** 2)]]
    fields = {
        "V1": (sp.Integer(1), [0, 0]),
        "V2": (sp.Integer(0), [1, 0]),
        "V3": (sp.Integer(0), [sp.exp(-k ** 2 * t) / k ** 2, -sp.exp(-k ** 2 * t)]),
        "V5": (sp.Integer(0), [t, 1]),
        "V6": (sp.Integer(0), [sp.exp(k ** 2 * t) / k ** 2, sp.exp(k ** 2 * t)]),
    }
    out = {}
    for name, (tau, xi) in fields.items():
        res = ito_conditions([x, y], f, S, [sp.sympify(v) for v in xi], tau)
        out[name] = [str(sp.simplify(r)) for r in res]
    return out


def misawa_ito_drift():
    x1, x2, x3 = sp.symbols("x1 x2 x3")
    xs = [x1, x2, x3]
    b = [x3 - x2, x1 - x3, x2 - x1]
    s = [x3 - x2, x1 - x3, x2 - x1]
    f = [sp.expand(b[i] + sp.Rational(1, 2) * sum(s[j] * sp.diff(s[i], xs[j]) for j in range(3)))
         for i in range(3)]
    return [str(v) for v in f]


def strong_conservation():
    x, y, z = sp.symbols("x y z")
    xs = [x, y, z]
    b = [-(y - z), -(z - x), -(x - y)]
    s = [z - y, x - z, y - x]
    J = x ** 2 + y ** 2 + z ** 2
    return {"X0J": str(sp.expand(sp.diff(J, t) + sum(b[i] * sp.diff(J, xs[i]) for i in range(3)))),
            "X1J": str(sp.expand(sum(s[i] * sp.diff(J, xs[i]) for i in range(3))))}


def kozlov():
    x = sp.symbols("x")
    F, G = sp.Function("f"), sp.Function("g")

    def mu(f, g):
        return sp.simplify((sp.diff(g, t) + f * sp.diff(g, x) + g ** 2 * sp.diff(g, x, 2) / 2
                            - g * sp.diff(f, x)) / g)

    def cond(f, g):
        inner = sp.diff(g, t) / g - g * sp.diff(f / g, x) + g * sp.diff(g, x, 2) / 2
        return sp.simplify(sp.diff(inner, x))

    cases = {"abstract": (F(t), G(t)), "gbm_half": (x / 2, x), "quadratic": (x ** 2, sp.Integer(1)),
             "constants": (sp.Integer(3), sp.Integer(2))}
    out = {}
    for name, (f, g) in cases.items():
        m = mu(f, g)
        out[name] = {"mu": str(m), "residual": str(cond(f, g))}
    # the two compatibility conditions for the state-dependent branch, x^2 drift
    f, g = x ** 2, sp.Integer(1)
    m = mu(f, g)
    mx, mxx, mxt = sp.diff(m, x), sp.diff(m, x, 2), sp.diff(m, x, t)
    gx, gt = sp.diff(g, x), sp.diff(g, t)
    a = sp.diff(mxx, x) - (g * mxx ** 2 - sp.diff(g, x, 2) * mx ** 2 - gx * mx * mxx) / (g * mx)
    b = sp.diff(mxx, t) - ((g * mxt + g * m * mx - gt * mx) * mxx
                           - (sp.diff(gx, t) - gx * m + g * mx) * mx ** 2) / (g * mx)
    out["quadratic"]["condition_a"] = str(sp.simplify(a))
    out["quadratic"]["condition_b"] = str(sp.simplify(b))
    return out


def linearization():
    x, y = sp.symbols("x y", positive=True)
    F, G = sp.Function("f"), sp.Function("g")

    def image(phi, f, g):
        return (sp.simplify(sp.diff(phi, t) + f * sp.diff(phi, x) + g ** 2 * sp.diff(phi, x, 2) / 2),
                sp.simplify(g * sp.diff(phi, x)))

    d, s = image(sp.log(x), x / 2, x)
    Fint = sp.Integral(F(t), t)
    d2, s2 = image(x - Fint, F(t), G(t))
    # time change s = int g^2 dt: diffusion g / sqrt(g^2)
    s2_new = sp.simplify(s2 / sp.sqrt(G(t) ** 2).subs(sp.sqrt(G(t) ** 2), G(t)))
    return {"gbm_half": {"drift": str(d), "diffusion": str(s)},
            "abstract": {"drift": str(d2), "diffusion": str(s2), "diffusion_after_time_change": str(s2_new)}}


def delta_identity():
    """delta with abstract phi, reduced on the diffusion constraint, for catalog sigmas."""
    x = sp.symbols("x")
    phi = sp.Function("phi")(x, t, w)
    out = {}
    for name, s in (("1", sp.Integer(1)), ("x", x), ("x^2", x ** 2), ("exp(x)", sp.exp(x))):
        rho = s * sp.diff(s, x) / 2
        lap = sp.diff(phi, w, 2) + s ** 2 * sp.diff(phi, x, 2) + 2 * s * sp.diff(phi, x, w)
        delta = phi * sp.diff(rho, x) - rho * sp.diff(phi, x) - lap / 2
        pw = phi * sp.diff(s, x) - s * sp.diff(phi, x)
        delta = delta.subs(sp.Derivative(phi, w, w), sp.diff(pw, w))
        delta = delta.subs(sp.Derivative(phi, w, w), sp.diff(pw, w))
        delta = delta.subs(sp.Derivative(phi, x, w), sp.diff(pw, x))
        delta = delta.subs(sp.Derivative(phi, w), pw)
        out[name] = str(sp.simplify(sp.expand(delta)))
    return out


def random_symmetry():
    x = sp.symbols("x")
    phi = sp.exp(w - t / 2)
    return {"ito": [str(v) for v in random_conditions(x, sp.Integer(1), x, phi, "ito")],
            "strat": [str(v) for v in random_conditions(x, 1 - x / 2, x, phi, "strat")]}


def abstract_brackets():
    x = sp.symbols("x")
    f, g = sp.Function("f")(t), sp.Function("g")(t)
    Gint = sp.Integral(g ** 2, t)
    Fint = sp.Integral(f, t)
    X1 = (g ** -2, f * g ** -2)
    X2 = (sp.Integer(0), sp.Integer(1))
    X3 = (2 * Gint * g ** -2, 2 * Gint * f * g ** -2 + x - Fint)

    def br(X, Y):
        def app(V, e):
            return V[0] * sp.diff(e, t) + V[1] * sp.diff(e, x)
        return tuple(sp.simplify(app(X, Y[i]) - app(Y, X[i])) for i in range(2))

    def ratio(a, b):
        return [str(sp.simplify(p / q)) if q != 0 else str(p) for p, q in zip(a, b)]

    out = {"X1X2": [str(v) for v in br(X1, X2)], "X1X3_over_X1": ratio(br(X1, X3), X1),
           "X2X3_over_X2": [str(br(X2, X3)[0]), str(sp.simplify(br(X2, X3)[1] / X2[1]))]}
    xs = [x]
    for name, (tau, xi) in (("X1", X1), ("X2", X2), ("X3", X3)):
        out[name + "_residuals"] = [str(sp.simplify(r)) for r in ito_conditions(xs, [f], [[g]], [xi], tau)]
    return out


def simulation_moments():
    T, s0 = 1, sp.Rational(3, 2)
    return {"brownian_var": float(s0 ** 2 * T), "ou_stationary_var": 1.0,
            "gbm_mean": float(sp.exp(T)), "gbm_m2": float(sp.exp(3 * T))}


def fp_coefficients_ou():
    """u_t = A u_yy + B u_y + C u written as the adjoint (forward) equation of dy = -k^2 y dt + sqrt(2k^2) dw."""
    y, k = sp.symbols("y k", positive=True)
    u = sp.Function("u")(y, t)
    f, D = -k ** 2 * y, 2 * k ** 2
    rhs = sp.expand(-sp.diff(f * u, y) + sp.diff(D * u, y, 2) / 2)
    # match against the sign convention u_t + A u_yy + B u_y + C u = 0
    A = -rhs.coeff(sp.Derivative(u, (y, 2)))
    B = -rhs.coeff(sp.Derivative(u, y))
    C = -sp.simplify((rhs + A * sp.diff(u, y, 2) + B * sp.diff(u, y)) / u)
    return {"A": str(A), "B": str(B), "C": str(C)}


def main():
    data = {
        "brownian_algebra": brownian_algebra(),
        "scalar_simple_dimensions": scalar_simple_dimensions(),
        "kramers_residuals": kramers(),
        "misawa_ito_drift": misawa_ito_drift(),
        "strong_conservation": strong_conservation(),
        "kozlov": kozlov(),
        "linearization": linearization(),
        "delta_identity": delta_identity(),
        "random_symmetry": random_symmetry(),
        "abstract_brackets": abstract_brackets(),
        "simulation": simulation_moments(),
        "fp_ou": fp_coefficients_ou(),
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    print(json.dumps(data, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
