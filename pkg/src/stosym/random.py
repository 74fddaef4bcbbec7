"""Random (noise-dependent) symmetries of Ito and Stratonovich equations."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

from .expr import (
    ONE, ZERO, AFn, Expr, ResidualSystem, Verdict, ZeroPolicy, differentiate, is_zero,
    policy_for, substitute,
)
from .fields import VectorField, as_expr, lie_bracket
from .ito import ItoSDE, _SDE, _grad_along, _hess_contract
from .strato import StratSDE, correction

__all__ = [
    "RandomGenerator", "ExtendedMisawaFrame", "extended_frame", "ito_laplacian",
    "random_determining", "compatibility_residual", "delta_random_scalar", "delta_random",
    "DeltaResult",
]

# A random generator is a vector field whose components may depend on w.
RandomGenerator = VectorField

_HALF = Fraction(1, 2)


@dataclass(frozen=True)
class ExtendedMisawaFrame:
    Y0: VectorField
    Yk: tuple
    L: Callable


def ito_laplacian(e, sde: _SDE) -> Expr:
    """sum_k e_{w_k w_k} + (sigma sigma^T)^{jk} e_{x_j x_k} + 2 sigma^j_k e_{x_j w_k}."""
    ctx = sde.ctx
    e = as_expr(e, ctx)
    xs, ws = ctx.states, ctx.noises
    out = _hess_contract(sde.D(), e, xs)
    for k, w in enumerate(ws):
        ew = differentiate(e, w)
        if ew.iszero:
            continue
        out = out + differentiate(ew, w)
        for j, x in enumerate(xs):
            if not sde.sigma[j][k].iszero:
                out = out + 2 * sde.sigma[j][k] * differentiate(ew, x)
    return out


def extended_frame(sde: _SDE) -> ExtendedMisawaFrame:
    ctx = sde.ctx
    Y0 = VectorField(ctx, ONE, sde._drift)
    Yk = []
    for k in range(ctx.m):
        h = [ONE if j == k else ZERO for j in range(ctx.m)]
        Yk.append(VectorField(ctx, ZERO, sde.column(k), h))

    def L(e):
        return Y0(e) + _HALF * ito_laplacian(e, sde)

    return ExtendedMisawaFrame(Y0, tuple(Yk), L)


_MODES = ("simple", "fiber", "general-w")


def _check(G: VectorField, sde: _SDE, mode: str):
    ctx = sde.ctx
    if mode not in _MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "simple":
        if not G.tau.iszero or any(not h.iszero for h in G.h):
            raise ValueError("simple random generators have tau = 0 and h = 0")
    if mode == "fiber":
        if not G.tau.free.isdisjoint(ctx.states):
            raise ValueError("fiber mode needs tau = tau(t, w)")
        if any(not h.iszero for h in G.h):
            raise ValueError("fiber mode does not act on the noises")
    if mode == "general-w" and G.B is None and any(not h.iszero for h in G.h):
        raise ValueError("noise components must be h = B w with B constant antisymmetric")


def random_determining(kind: str, sde: _SDE, G: VectorField, mode: str = "simple") -> ResidualSystem:
    """Determining equations for random symmetries (corrected Ito Laplacian throughout)."""
    _check(G, sde, mode)
    if kind == "ito":
        if not isinstance(sde, ItoSDE):
            raise TypeError("kind 'ito' needs an ItoSDE")
        return _ito_random(sde, G, mode)
    if kind == "strat":
        if not isinstance(sde, StratSDE):
            raise TypeError("kind 'strat' needs a StratSDE")
        return _strat_random(sde, G, mode)
    raise ValueError(f"unknown kind {kind!r}")


def _ito_random(sde: ItoSDE, G: VectorField, mode: str) -> ResidualSystem:
    ctx = sde.ctx
    fr = extended_frame(sde)
    t = ctx.time
    f, sig = sde.f, sde.sigma
    phi, tau, h = G.xi, G.tau, G.h
    Lt = fr.L(tau)
    tau_t = differentiate(tau, t)
    Lh = [fr.L(v) for v in h]
    res = []
    for i in range(ctx.n):
        r = fr.L(phi[i]) - G(f[i]) - f[i] * Lt - sum((sig[i][p] * Lh[p] for p in range(ctx.m)), ZERO)
        res.append((("drift", i), r))
    for i in range(ctx.n):
        for k, Y in enumerate(fr.Yk):
            Yh = [Y(v) for v in h]
            r = (Y(phi[i]) - G(sig[i][k]) - f[i] * Y(tau)
                 - sum((sig[i][p] * Yh[p] for p in range(ctx.m)), ZERO) - _HALF * tau_t * sig[i][k])
            res.append((("diff", i, k), r))
    return ResidualSystem(res, ctx)


def _strat_random(sde: StratSDE, G: VectorField, mode: str) -> ResidualSystem:
    ctx = sde.ctx
    xs, ws, t = ctx.states, ctx.noises, ctx.time
    b, sig = sde.b, sde.sigma
    phi, tau, h = G.xi, G.tau, G.h
    tau_t = differentiate(tau, t)
    b_tau = _grad_along(b, tau, xs)
    res = []
    for i in range(ctx.n):
        r = (differentiate(phi[i], t) + _grad_along(b, phi[i], xs) - _grad_along(phi, b[i], xs)
             - differentiate(tau * b[i], t) - b[i] * b_tau
             - sum((sig[i][p] * differentiate(h[p], t) for p in range(ctx.m)), ZERO))
        res.append((("drift", i), r))
    for i in range(ctx.n):
        for k, w in enumerate(ws):
            col = sde.column(k)
            r = (differentiate(phi[i], w) + _grad_along(col, phi[i], xs) - _grad_along(phi, sig[i][k], xs)
                 - b[i] * (differentiate(tau, w) + _grad_along(col, tau, xs))
                 - sum((sig[i][p] * differentiate(h[p], w) for p in range(ctx.m)), ZERO)
                 - tau * differentiate(sig[i][k], t) - _HALF * tau_t * sig[i][k])
            res.append((("diff", i, k), r))
    rs = ResidualSystem(res, ctx)
    if mode == "simple":
        fr = extended_frame(sde)
        space = [t] + list(xs) + list(ws)
        comm = []
        for mu, Y in enumerate((fr.Y0,) + fr.Yk):
            br = lie_bracket(Y, G, space)
            if not br.tau.iszero or any(not v.iszero for v in br.h):
                raise AssertionError("commutator acquired time or noise components")
            for i in range(ctx.n):
                comm.append(((mu, i), br.xi[i]))
        got = dict(comm)
        if any(got[(0, i)] != rs[("drift", i)] for i in range(ctx.n)) or any(
                got[(k + 1, i)] != rs[("diff", i, k)] for i in range(ctx.n) for k in range(ctx.m)):
            raise AssertionError("commutator form disagrees with the residual form")
        rs.forms["commutator"] = ResidualSystem(comm, ctx)
    return rs


# ---------------------------------------------------------------- scalar compatibility analysis

def _scalar(sde: _SDE):
    if sde.n != 1 or sde.m != 1:
        raise ValueError("scalar equations only (n = m = 1)")
    ctx = sde.ctx
    return ctx.states[0], ctx.time, ctx.noises[0], sde.sigma[0][0]


def compatibility_residual(sde: ItoSDE, phi) -> Expr:
    x, t, w, s = _scalar(sde)
    phi = as_expr(phi, sde.ctx)
    sx = differentiate(s, x)
    lap = ito_laplacian(phi, sde)
    return lap - (phi * sx * sx + phi * s * differentiate(sx, x) - s * sx * differentiate(phi, x))


@dataclass
class DeltaResult:
    delta: Expr
    reduced: Expr
    verdict: Verdict


def delta_random(sde: ItoSDE, G: VectorField) -> tuple:
    """delta^i = phi.grad rho^i - rho.grad phi^i - 1/2 (corrected Laplacian) phi^i."""
    xs = sde.ctx.states
    rho = correction(sde)
    return tuple(_grad_along(G.xi, rho[i], xs) - _grad_along(rho, G.xi[i], xs)
                 - _HALF * ito_laplacian(G.xi[i], sde) for i in range(sde.n))


def delta_random_scalar(sde: ItoSDE, phi, policy: ZeroPolicy | None = None,
                        max_rounds: int = 64) -> DeltaResult:
    """delta for an abstract phi(x, t, w), then reduced with phi_w = phi sigma_x - sigma phi_x."""
    x, t, w, s = _scalar(sde)
    ctx = sde.ctx
    phi = as_expr(phi, ctx)
    G = VectorField(ctx, ZERO, [phi])
    delta = delta_random(sde, G)[0]
    base = _abstract_atom(phi)
    reduced = delta
    if base is not None:
        cons = phi * differentiate(s, x) - s * differentiate(phi, x)
        wpos = _arg_position(base, w)
        for _ in range(max_rounds):
            targets = [a for a in reduced.atoms()
                       if type(a) is AFn and a.name == base.name and a.args == base.args and a.orders[wpos] > 0]
            if not targets:
                break
            mapping = {}
            for a in targets:
                e = cons
                for pos, order in enumerate(a.orders):
                    k = order - 1 if pos == wpos else order
                    for _ in range(k):
                        e = differentiate(e, _arg_name(base, pos))
                mapping[a] = e
            reduced = substitute(reduced, mapping)
        else:
            raise RuntimeError("constraint substitution did not close")
    verdict = Verdict("proven") if reduced.iszero else is_zero(reduced, policy_for(ctx, policy))
    return DeltaResult(delta, reduced, verdict)


def _abstract_atom(phi: Expr):
    if len(phi.terms) != 1:
        return None
    (m, c), = phi.terms.items()
    if c != 1 or len(m) != 1 or m[0][1] != 1:
        return None
    a = m[0][0]
    if type(a) is not AFn or any(a.orders):
        return None
    for arg in a.args:
        (mm, cc), = arg.terms.items() if len(arg.terms) == 1 else ((None, None),)
        if mm is None or cc != 1 or len(mm) != 1 or mm[0][1] != 1:
            raise ValueError("phi must be an abstract function of plain variables")
    return a


def _arg_name(a: AFn, pos: int) -> str:
    (m, _), = a.args[pos].terms.items()
    return m[0][0].name


def _arg_position(a: AFn, name: str) -> int:
    for pos in range(len(a.args)):
        if _arg_name(a, pos) == name:
            return pos
    raise ValueError(f"phi does not depend on {name}")
