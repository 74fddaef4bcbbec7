"""Stratonovich equations, conversion to and from Ito form, Misawa fields and
conserved quantities."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .expr import (
    ONE, ZERO, Expr, ResidualSystem, StandIns, ZeroPolicy, _afn_degrees, _free_syms,
    differentiate, evaluate, policy_for, sample_points,
)
from .fields import VectorField, as_expr, lie_bracket
from .ito import ItoSDE, _SDE, _check_shape, _grad_along, _hess_contract

__all__ = [
    "StratSDE", "MisawaFrame", "ChargeResult", "correction", "ito_to_strat", "strat_to_ito",
    "misawa_frame", "strat_determining", "extended_symmetry_check", "unal_condition",
    "delta_deterministic", "strongly_conserved", "misawa_charge", "pushforward_charge",
]


class StratSDE(_SDE):
    """dx^i = b^i(x,t) dt + sigma^i_k(x,t) o dw^k."""

    kind = "strat"

    @property
    def b(self) -> tuple:
        return self._drift


def correction(sde: _SDE) -> tuple:
    """rho^i = 1/2 sigma^k_j d_k sigma^i_j, the Ito-Stratonovich drift shift."""
    xs = sde.ctx.states
    out = []
    for i in range(sde.n):
        r = ZERO
        for j in range(sde.m):
            for k, x in enumerate(xs):
                if not sde.sigma[k][j].iszero:
                    r = r + sde.sigma[k][j] * differentiate(sde.sigma[i][j], x)
        out.append(r * Fraction(1, 2))
    return tuple(out)


def ito_to_strat(sde: ItoSDE) -> StratSDE:
    rho = correction(sde)
    return StratSDE(sde.ctx, [f - r for f, r in zip(sde.f, rho)], sde.sigma)


def strat_to_ito(sde: StratSDE) -> ItoSDE:
    rho = correction(sde)
    return ItoSDE(sde.ctx, [b + r for b, r in zip(sde.b, rho)], sde.sigma)


@dataclass(frozen=True)
class MisawaFrame:
    X0: VectorField
    Xk: tuple

    @property
    def fields(self) -> tuple:
        return (self.X0,) + self.Xk


def misawa_frame(sde: StratSDE) -> MisawaFrame:
    ctx = sde.ctx
    X0 = VectorField(ctx, ONE, sde.b)
    Xk = tuple(VectorField(ctx, ZERO, sde.column(k)) for k in range(sde.m))
    return MisawaFrame(X0, Xk)


_STRAT_MODES = ("general", "fiber", "misawa-simple", "w")


def strat_determining(sde: StratSDE, X: VectorField, mode: str = "misawa-simple") -> ResidualSystem:
    """Determining equations for a deterministic generator of a Stratonovich equation."""
    if mode not in _STRAT_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    ctx = sde.ctx
    _check_shape(X, ctx, mode)
    xs, t = ctx.states, ctx.time
    b, sig, phi, tau = sde.b, sde.sigma, X.xi, X.tau
    half = Fraction(1, 2)
    tau_t = differentiate(tau, t)
    tau_grad = [differentiate(tau, x) for x in xs]
    b_tau = _grad_along(b, tau, xs)
    res = []
    for i in range(ctx.n):
        r = (differentiate(phi[i], t) + _grad_along(b, phi[i], xs) - _grad_along(phi, b[i], xs)
             - differentiate(tau * b[i], t) - b[i] * b_tau)
        res.append((("drift", i), r))
    for i in range(ctx.n):
        for k in range(ctx.m):
            col = sde.column(k)
            r = (_grad_along(col, phi[i], xs) - _grad_along(phi, sig[i][k], xs)
                 - tau * differentiate(sig[i][k], t) - half * tau_t * sig[i][k]
                 - b[i] * sum((col[j] * tau_grad[j] for j in range(ctx.n)), ZERO))
            if mode == "w":
                r = r - sum((sig[i][p] * X.B[p][k] for p in range(ctx.m)), ZERO)
            res.append((("diff", i, k), r))
    rs = ResidualSystem(res, ctx)
    if mode == "misawa-simple":
        frame = misawa_frame(sde)
        comm = []
        for mu, Y in enumerate(frame.fields):
            br = lie_bracket(Y, X, [t] + list(xs))
            if not br.tau.iszero:
                raise AssertionError("commutator with a simple field acquired a time component")
            for i in range(ctx.n):
                comm.append(((mu, i), br.xi[i]))
        got = dict(comm)
        if any(got[(0, i)] != rs[("drift", i)] for i in range(ctx.n)) or any(
                got[(k + 1, i)] != rs[("diff", i, k)] for i in range(ctx.n) for k in range(ctx.m)):
            raise AssertionError("commutator form disagrees with the residual form")
        rs.forms["commutator"] = ResidualSystem(comm, ctx)
    return rs


# ---------------------------------------------------------------- extended symmetries

@dataclass
class ExtendedResult:
    member: bool
    commutators: tuple
    residuals: ResidualSystem | None = None
    witness: dict | None = None
    max_defect: float = 0.0


def _field_vector(V: VectorField) -> tuple:
    return (V.tau,) + V.xi


def extended_symmetry_check(sde: StratSDE, L: VectorField, coeffs: dict | None = None,
                            policy: ZeroPolicy | None = None, threshold: float = 1e-8) -> ExtendedResult:
    """Whether [X_mu, L] lies in the span of the Misawa frame.

    ``coeffs`` maps "T0", "T1".., and "R0_k", "R1_k".. (k = 1..m) to expressions;
    with it the decomposition is checked symbolically, otherwise by a
    pointwise rank test.
    """
    ctx = sde.ctx
    policy = policy_for(ctx, policy)
    frame = misawa_frame(sde)
    space = [ctx.time] + list(ctx.states)
    comms = tuple(lie_bracket(Y, L, space) for Y in frame.fields)
    if coeffs is not None:
        c = {k: as_expr(v, ctx) for k, v in coeffs.items()}
        res = []
        for mu, C in enumerate(comms):
            pre = "T" if mu == 0 else "R"
            suffix = "" if mu == 0 else f"_{mu}"
            combo = VectorField(ctx, ZERO, [ZERO] * ctx.n)
            for nu, Y in enumerate(frame.fields):
                combo = combo + Y.scale(c.get(f"{pre}{nu}{suffix}", ZERO))
            diff = C - combo
            for a, e in enumerate(_field_vector(diff)):
                res.append(((mu, a), e))
        rs = ResidualSystem(res, ctx)
        return ExtendedResult(rs.all_zero(policy), comms, rs)
    frame_vecs = [_field_vector(Y) for Y in frame.fields]
    comm_vecs = [_field_vector(C) for C in comms]
    exprs = [e for v in frame_vecs + comm_vecs for e in v]
    names = _free_syms(exprs)
    pts = sample_points(names, policy)
    stand = StandIns(policy.seed, _afn_degrees(exprs))
    N = policy.samples

    def num(e):
        return np.broadcast_to(np.asarray(evaluate(e, pts, standins=stand), dtype=float), (N,))

    F = np.stack([np.stack([num(e) for e in v], axis=-1) for v in frame_vecs], axis=-1)  # N x (n+1) x (m+1)
    worst = 0.0
    for C in comm_vecs:
        v = np.stack([num(e) for e in C], axis=-1)
        for k in range(N):
            A = F[k]
            if not np.all(np.isfinite(A)) or not np.all(np.isfinite(v[k])):
                continue
            scale = max(1.0, np.linalg.norm(A), np.linalg.norm(v[k]))
            coef, *_ = np.linalg.lstsq(A, v[k], rcond=None)
            defect = np.linalg.norm(A @ coef - v[k]) / scale
            worst = max(worst, defect)
            if defect > threshold:
                return ExtendedResult(False, comms, None, {n: float(pts[n][k]) for n in names}, defect)
    return ExtendedResult(True, comms, None, None, worst)


# ---------------------------------------------------------------- Ito versus Stratonovich

def unal_condition(sde: ItoSDE, X: VectorField) -> ResidualSystem:
    """(sigma sigma^T)^{ik} d_k [tau_t + f.grad tau + 1/2 D:grad grad tau]."""
    ctx = sde.ctx
    xs = ctx.states
    D = sde.D()
    tau = X.tau
    inner = (differentiate(tau, ctx.time) + _grad_along(sde.f, tau, xs)
             + Fraction(1, 2) * _hess_contract(D, tau, xs))
    grad = [differentiate(inner, x) for x in xs]
    res = [(("unal", i), sum((D[i][k] * grad[k] for k in range(ctx.n)), ZERO)) for i in range(ctx.n)]
    return ResidualSystem(res, ctx)


def delta_deterministic(sde: ItoSDE, X: VectorField) -> tuple:
    """delta^i = phi.grad rho^i - rho.grad phi^i - 1/2 D:grad grad phi^i for simple X."""
    ctx = sde.ctx
    if not X.tau.iszero or not X.noise_free:
        raise ValueError("delta is defined for simple, noise-free generators")
    xs = ctx.states
    rho = correction(sde)
    D = sde.D()
    return tuple(_grad_along(X.xi, rho[i], xs) - _grad_along(rho, X.xi[i], xs)
                 - Fraction(1, 2) * _hess_contract(D, X.xi[i], xs) for i in range(ctx.n))


def delta_on_solutions(sde: ItoSDE, families, policy: ZeroPolicy | None = None) -> list:
    """delta on user-supplied solutions of the common diffusion constraint."""
    out = []
    for X in families:
        diff = ito_simple_diffusion(sde, X)
        if not diff.all_zero(policy):
            raise ValueError(f"{X} does not solve the diffusion constraint")
        d = delta_deterministic(sde, X)
        out.append((d, ResidualSystem([(("delta", i), e) for i, e in enumerate(d)], sde.ctx).all_zero(policy)))
    return out


def ito_simple_diffusion(sde: ItoSDE, X: VectorField) -> ResidualSystem:
    from .ito import ito_determining
    return ito_determining(sde, X, "simple").subset("diff")


# ---------------------------------------------------------------- conserved quantities

def strongly_conserved(sde: StratSDE, J) -> ResidualSystem:
    ctx = sde.ctx
    J = as_expr(J, ctx)
    if not J.free.isdisjoint(ctx.noises):
        raise ValueError("J must not depend on the noises")
    frame = misawa_frame(sde)
    return ResidualSystem([(("X", mu), Y(J)) for mu, Y in enumerate(frame.fields)], ctx)


@dataclass
class ChargeResult:
    charge: Expr
    conditions: ResidualSystem
    conservation: ResidualSystem
    symmetry: ResidualSystem | None = None


def misawa_charge(sde: StratSDE, X: VectorField, lam, extended: bool = False) -> ChargeResult:
    """J = div phi + X(lambda), or with ``extended`` K = tau_t + div phi + X(lambda) - X0(tau)."""
    ctx = sde.ctx
    lam = as_expr(lam, ctx)
    if not extended and not X.tau.iszero:
        raise ValueError("use extended=True for generators acting on time")
    frame = misawa_frame(sde)
    xs = ctx.states
    conds = [(("lambda", 0), sum((differentiate(b, x) for b, x in zip(sde.b, xs)), ZERO) + frame.X0(lam))]
    for k, Y in enumerate(frame.Xk):
        div = sum((differentiate(s, x) for s, x in zip(sde.column(k), xs)), ZERO)
        conds.append((("lambda", k + 1), div + Y(lam)))
    J = X.divergence() + X(lam)
    if extended:
        J = J + differentiate(X.tau, ctx.time) - frame.X0(X.tau)
    sym = None
    if not extended:
        sym = strat_determining(sde, X, "misawa-simple")
    return ChargeResult(J, ResidualSystem(conds, ctx), strongly_conserved(sde, J), sym)


@dataclass
class PushforwardResult:
    value: Expr
    conservation: ResidualSystem
    preconditions: dict


def pushforward_charge(sde: StratSDE, X: VectorField, J, policy: ZeroPolicy | None = None) -> PushforwardResult:
    """X(J) for a strong symmetry X and conserved J; preconditions are reported."""
    ctx = sde.ctx
    J = as_expr(J, ctx)
    pre = {
        "symmetry": strat_determining(sde, X, "misawa-simple").all_zero(policy),
        "conserved": strongly_conserved(sde, J).all_zero(policy),
    }
    val = X(J)
    return PushforwardResult(val, strongly_conserved(sde, val), pre)
