"""Structure results for Ito equations: the mu invariant, linearization,
the three-dimensional-algebra condition, reduction and quadrature."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .expr import (
    ONE, ZERO, AFn, Context, Expr, Fn, Sym, Verdict, ZeroPolicy, differentiate, exp, integral,
    is_zero, is_zero_many, log, policy_for, sym, _atom_expr,
)
from .fields import VectorField, as_expr
from .ito import ItoSDE, ito_change_of_variables, ito_determining

__all__ = [
    "kozlov_mu", "kozlov_condition", "KozlovResult", "linearize", "LinearizationResult",
    "reduce_by_spatial_symmetry", "ReductionResult", "quadrature_form", "QuadratureRecord",
    "antiderivative",
]

_HALF = Fraction(1, 2)


def _scalar(sde: ItoSDE):
    if sde.n != 1 or sde.m != 1:
        raise ValueError("scalar equations only (n = m = 1)")
    ctx = sde.ctx
    return ctx.states[0], ctx.time, sde.f[0], sde.sigma[0][0]


# ---------------------------------------------------------------- antiderivatives

def _depends(a, var: str) -> bool:
    return var in a.free


def _term_antiderivative(mono, coef, var: str, kind: str):
    """Closed-form antiderivative of one monomial, or None outside the catalog."""
    const_part = Expr({(): coef})
    dep = []
    for a, e in mono:
        if _depends(a, var):
            dep.append((a, e))
        else:
            const_part = const_part * _atom_expr(a) ** e
    if not dep:
        return const_part * sym(var, kind)
    if len(dep) == 1:
        a, e = dep[0]
        if type(a) is Sym:
            if e == -1:
                return const_part * log(_atom_expr(a))
            return const_part * _atom_expr(a) ** (e + 1) / (e + 1)
        if type(a) is Fn and a.tag == "exp":
            slope = differentiate(a.arg, var)
            if not slope.iszero and var not in slope.free:
                arg = a.arg * e
                return const_part * exp(arg) / (slope * e)
        if type(a) is AFn and e == 1 and _plain_in(a, var):
            pos = _arg_pos(a, var)
            if a.orders[pos] > 0:
                orders = list(a.orders)
                orders[pos] -= 1
                return const_part * _atom_expr(AFn(a.name, a.args, tuple(orders)))
    if len(dep) == 2:
        # u'/u -> log u for an abstract u of the integration variable
        (a1, e1), (a2, e2) = dep
        for (num, en), (den, ed) in (((a1, e1), (a2, e2)), ((a2, e2), (a1, e1))):
            if (type(num) is AFn and type(den) is AFn and en == 1 and ed == -1
                    and num.name == den.name and num.args == den.args and _plain_in(den, var)):
                pos = _arg_pos(den, var)
                want = list(den.orders)
                want[pos] += 1
                if tuple(want) == num.orders:
                    return const_part * log(_atom_expr(den))
    return None


def _plain_in(a: AFn, var: str) -> bool:
    """var enters ``a`` only as a bare argument."""
    hits = [x for x in a.args if var in x.free]
    return len(hits) == 1 and len(hits[0].terms) == 1 and all(
        type(b) is Sym and b.name == var and e == 1 and c == 1
        for m, c in hits[0].terms.items() for b, e in m) and len(next(iter(hits[0].terms))) == 1


def _arg_pos(a: AFn, var: str) -> int:
    for i, x in enumerate(a.args):
        if var in x.free:
            return i
    raise ValueError(var)


def antiderivative(e: Expr, var: str, kind: str = "time") -> tuple:
    """(closed part, formal remainder) with e = d/dvar(closed) + remainder.

    The catalog covers powers (including 1/var), exponentials of linear
    arguments, derivatives of abstract functions and their log-derivatives.
    Anything else becomes a formal integral record.
    """
    closed, formal = ZERO, ZERO
    v = Sym(var, kind)
    for m, c in e.terms.items():
        r = _term_antiderivative(m, c, var, kind)
        if r is not None:
            closed = closed + r
            continue
        outside = Expr({(): c})
        inside = []
        for a, p in m:
            if var in a.free:
                inside.append((a, p))
            else:
                outside = outside * _atom_expr(a) ** p
        formal = formal + outside * integral(Expr({tuple(inside): Fraction(1)}), v)
    return closed, formal


def _integrate(e: Expr, var: str, kind: str) -> Expr:
    closed, formal = antiderivative(e, var, kind)
    return closed + formal


# ---------------------------------------------------------------- Kozlov

def kozlov_mu(sde: ItoSDE) -> Expr:
    """mu = (g_t + f g_x + g^2 g_xx / 2 - g f_x) / g."""
    x, t, f, g = _scalar(sde)
    if g.iszero:
        raise ValueError("g must not vanish")
    gx = differentiate(g, x)
    return (differentiate(g, t) + f * gx + _HALF * g * g * differentiate(gx, x)
            - g * differentiate(f, x)) / g


@dataclass
class KozlovResult:
    residual: Expr
    verdict: Verdict

    @property
    def holds(self) -> bool:
        return bool(self.verdict)


def kozlov_condition(sde: ItoSDE, policy: ZeroPolicy | None = None) -> KozlovResult:
    """[g_t/g - g (f/g)_x + g g_xx / 2]_x = 0: a spatial symmetry exists."""
    x, t, f, g = _scalar(sde)
    gx = differentiate(g, x)
    bracket = differentiate(g, t) / g - g * differentiate(f / g, x) + _HALF * g * differentiate(gx, x)
    r = differentiate(bracket, x)
    return KozlovResult(r, is_zero(r, policy_for(sde.ctx, policy)))


# ---------------------------------------------------------------- linearization

@dataclass
class LinearizationResult:
    case: str                      # "constant-diffusion" | "state-diffusion" | "not-linearizable"
    mu: Expr
    mu_x: Expr
    h: Expr | None = None
    alpha: Expr | None = None
    beta: Expr | None = None
    phi_t: Expr | None = None
    phi_x: Expr | None = None
    phi: Expr | None = None
    target: tuple | None = None    # (drift, diffusion) of the linear equation, in x-coordinates
    conditions: dict = field(default_factory=dict)
    verified: bool | None = None

    def to_dict(self) -> dict:
        def s(v):
            return None if v is None else str(v)
        return {
            "case": self.case, "mu": s(self.mu), "h": s(self.h), "alpha": s(self.alpha),
            "beta": s(self.beta), "phi_t": s(self.phi_t), "phi_x": s(self.phi_x), "phi": s(self.phi),
            "target": None if self.target is None else [s(v) for v in self.target],
            "conditions": {k: s(v) for k, v in sorted(self.conditions.items())},
            "verified": self.verified,
        }


def _x_free(e: Expr, x: str, policy) -> bool:
    return e.iszero or x not in e.free or bool(is_zero(differentiate(e, x), policy))


def _map_from_gradient(phi_t: Expr, phi_x: Expr, x: str, t: str, xkind: str, tkind: str, policy):
    """phi with the given partial derivatives, or None if not reachable by the catalog."""
    px, formal = antiderivative(phi_x, x, xkind)
    if not formal.iszero:
        return None
    rest = phi_t - differentiate(px, t)
    if not _x_free(rest, x, policy):
        return None
    return px + _integrate(rest, t, tkind)


def _ito_image(phi: Expr, f: Expr, g: Expr, x: str, t: str) -> tuple:
    px = differentiate(phi, x)
    return (differentiate(phi, t) + f * px + _HALF * g * g * differentiate(px, x), g * px)


def linearize(sde: ItoSDE, policy: ZeroPolicy | None = None) -> LinearizationResult:
    """Linearizing map of a scalar Ito equation by a change of the dependent variable."""
    x, t, f, g = _scalar(sde)
    ctx = sde.ctx
    policy = policy_for(ctx, policy)
    mu = kozlov_mu(sde)
    mu_x = differentiate(mu, x)
    if mu_x.iszero or is_zero(mu_x, policy):
        h = exp(_integrate(mu, t, "time"))
        phi_t = h * (_HALF * differentiate(g, x) - f / g)
        phi_x = h / g
        res = LinearizationResult("constant-diffusion", mu, mu_x, h=h, phi_t=phi_t, phi_x=phi_x,
                                  target=(ZERO, h))
        res.conditions["compatibility"] = differentiate(phi_t, x) - differentiate(phi_x, t)
        phi = _map_from_gradient(phi_t, phi_x, x, t, "state", "time", policy)
        if phi is not None:
            res.phi = phi
            F, G = _ito_image(phi, f, g, x, t)
            res.verified = all(is_zero_many([F, G - h], policy))
        return res
    gx = differentiate(g, x)
    mu_xx = differentiate(mu_x, x)
    mu_xt = differentiate(mu_x, t)
    cond_a = differentiate(mu_xx, x) - (g * mu_xx * mu_xx - differentiate(gx, x) * mu_x * mu_x
                                        - gx * mu_x * mu_xx) / (g * mu_x)
    cond_b = differentiate(mu_xx, t) - (
        (g * mu_xt + g * mu * mu_x - differentiate(g, t) * mu_x) * mu_xx
        - (differentiate(gx, t) - gx * mu + g * mu_x) * mu_x * mu_x) / (g * mu_x)
    conditions = {"a": cond_a, "b": cond_b}
    ok = all(is_zero_many([cond_a, cond_b], policy))
    if not ok:
        return LinearizationResult("not-linearizable", mu, mu_x, conditions=conditions)
    beta = -(gx * mu_x + g * mu_xx) / mu_x
    integrand = (beta * (gx - beta) * _HALF + (differentiate(g, t) - f * beta) / g
                 + mu_xt / mu_x - 2 * g * mu_x / beta - mu)
    alpha = exp(_integrate(integrand, t, "time"))
    denom = differentiate(beta, t) - beta * mu
    res = LinearizationResult("state-diffusion", mu, mu_x, alpha=alpha, beta=beta,
                              conditions=conditions)
    if is_zero(denom, policy):
        res.case = "not-linearizable"
        res.conditions["phi-denominator"] = denom
        return res
    res.phi = alpha * beta / denom
    res.target = (alpha, beta * res.phi)
    # the alpha integral's variables are not pinned down; no verification claimed
    res.verified = None
    return res


# ---------------------------------------------------------------- reduction

@dataclass
class ReductionResult:
    transformed: ItoSDE
    reduced: ItoSDE | None
    reconstruction: tuple | None     # (drift, (diffusion_k...)) of the last coordinate
    free_of_last: bool
    deterministic: tuple             # new coordinates with vanishing diffusion
    autonomous_noise: tuple          # new coordinates whose equation involves no state

    def to_dict(self) -> dict:
        return {
            "transformed": self.transformed.to_dict(),
            "reduced": None if self.reduced is None else self.reduced.to_dict(),
            "reconstruction": None if self.reconstruction is None else {
                "drift": str(self.reconstruction[0]),
                "diffusion": [str(v) for v in self.reconstruction[1]]},
            "free_of_last": self.free_of_last,
            "deterministic": list(self.deterministic),
            "autonomous_noise": list(self.autonomous_noise),
        }


def reduce_by_spatial_symmetry(sde: ItoSDE, y, inverse, new_ctx: Context,
                               symmetry: VectorField | None = None,
                               policy: ZeroPolicy | None = None) -> ReductionResult:
    """Rewrite the equation in user-supplied adapted coordinates.

    With ``symmetry`` given, it must be a spatial symmetry reading d/dy^n in
    the new coordinates, and the coefficients must then be free of y^n.
    Without it the transformed system is returned together with its
    deterministic/stochastic split.
    """
    ctx = sde.ctx
    policy = policy_for(ctx, policy)
    y = [as_expr(v, ctx) for v in y]
    if symmetry is not None:
        if not symmetry.tau.iszero:
            raise ValueError("only spatial generators (tau = 0) can be used for reduction")
        if not ito_determining(sde, symmetry, "simple").all_zero(policy):
            raise ValueError("the given generator is not a symmetry of the equation")
        push = [symmetry(v) - (ONE if i == len(y) - 1 else ZERO) for i, v in enumerate(y)]
        if not all(is_zero_many(push, policy)):
            raise ValueError("the symmetry does not read d/dy^n in the adapted coordinates")
    out = ito_change_of_variables(sde, y, inverse, new_ctx, policy=policy)
    nctx = out.ctx
    npol = policy_for(nctx, policy)
    last = nctx.states[-1]
    coeffs = list(out.f) + [v for r in out.sigma for v in r]
    free = all(is_zero_many([differentiate(c, last) for c in coeffs], npol))
    if symmetry is not None and not free:
        raise ValueError(f"transformed coefficients still depend on {last}")
    states = set(nctx.states)
    det = tuple(nm for nm, row in zip(nctx.states, out.sigma) if all(v.iszero for v in row))
    auto = tuple(nm for nm, fi, row in zip(nctx.states, out.f, out.sigma)
                 if states.isdisjoint(fi.free) and all(states.isdisjoint(v.free) for v in row))
    reduced = recon = None
    if free:
        recon = (out.f[-1], tuple(out.sigma[-1]))
        if nctx.n > 1:
            rctx = nctx.with_(states=nctx.states[:-1])
            sig = [list(r) for r in out.sigma[:-1]]
            if any(not v.iszero for r in sig for v in r):
                reduced = ItoSDE(rctx, out.f[:-1], sig)
    return ReductionResult(out, reduced, recon, free, det, auto)


# ---------------------------------------------------------------- quadrature

@dataclass
class QuadratureRecord:
    drift_integrand: Expr
    diffusion_integrand: Expr
    drift_antiderivative: Expr      # closed form or formal record F(t)
    noise_term: Expr | None         # g (w - w0) when g is constant, else None (Ito integral)
    text: str

    def to_dict(self) -> dict:
        return {"drift": str(self.drift_integrand), "diffusion": str(self.diffusion_integrand),
                "drift_antiderivative": str(self.drift_antiderivative),
                "noise_term": None if self.noise_term is None else str(self.noise_term),
                "solution": self.text}


def quadrature_form(sde: ItoSDE, policy: ZeroPolicy | None = None) -> QuadratureRecord:
    """Solution by quadratures of dy = phi(t) dt + gamma(t) dw."""
    x, t, f, g = _scalar(sde)
    policy = policy_for(sde.ctx, policy)
    if not (_x_free(f, x, policy) and _x_free(g, x, policy)):
        raise ValueError("coefficients must depend on time only")
    F = _integrate(f, t, "time")
    w = sde.ctx.noises[0]
    parts = [f"{x}({t}) = {x}({t}0)"]
    if not f.iszero:
        parts.append(f"int_{t}0^{t} ({f}) d{t}")
    noise = None
    if g.is_const:
        noise = g * (sde.ctx.sym(w) - Expr({((Sym(w + "0", "dummy"), Fraction(1)),): Fraction(1)}))
        parts.append(f"({g})*({w}({t}) - {w}({t}0))")
    else:
        parts.append(f"int_{t}0^{t} ({g}) d{w}({t})")
    return QuadratureRecord(f, g, F, noise, " + ".join(parts))
