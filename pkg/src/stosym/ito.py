"""Ito equations: determining equations, Fokker-Planck coefficients, lifts and
changes of variables."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .expr import (
    ZERO, Context, Expr, ResidualSystem, ZeroPolicy, differentiate, is_zero_many,
    policy_for, power, sample_points, evaluate, sqrt, substitute, _free_syms,
)
from .fields import VectorField, as_expr, matrix

__all__ = [
    "ItoSDE", "FPCoefficients", "FPSymmetryExtension", "make_context", "diffusion_matrix",
    "ito_determining", "fp_coefficients", "fp_determining", "gamma_obstruction",
    "lift_n_particle", "ito_change_of_variables",
]


def make_context(states, noises=None, time="t", params=(), bindings=None, functions=None,
                 velocities=()) -> Context:
    states = tuple(states)
    if noises is None:
        noises = ("w",)
    return Context(states=states, time=time, noises=tuple(noises), velocities=tuple(velocities),
                   params=tuple(params), bindings=dict(bindings or {}), functions=dict(functions or {}))


class _SDE:
    kind = ""

    def __init__(self, ctx: Context, drift, sigma):
        self.ctx = ctx
        drift = tuple(as_expr(v, ctx) for v in drift)
        sig = matrix(sigma, ctx)
        if len(drift) != ctx.n:
            raise ValueError(f"drift needs {ctx.n} components, got {len(drift)}")
        if len(sig) != ctx.n or any(len(r) != ctx.m for r in sig):
            raise ValueError(f"diffusion must be {ctx.n}x{ctx.m}")
        noises = set(ctx.noises)
        for e in drift + tuple(v for r in sig for v in r):
            if not noises.isdisjoint(e.free):
                raise ValueError("coefficients must not depend on noise variables")
        if all(v.iszero for r in sig for v in r):
            raise ValueError("diffusion matrix must not vanish identically")
        self._drift = drift
        self.sigma = sig

    @property
    def n(self) -> int:
        return self.ctx.n

    @property
    def m(self) -> int:
        return self.ctx.m

    def column(self, k: int) -> tuple:
        return tuple(self.sigma[i][k] for i in range(self.n))

    def D(self) -> tuple:
        """sigma sigma^T."""
        return diffusion_matrix(self.sigma)

    def __eq__(self, other):
        return (type(other) is type(self) and self._drift == other._drift and self.sigma == other.sigma)

    def __hash__(self):
        return hash((self._drift, self.sigma))

    def to_dict(self) -> dict:
        key = "f" if self.kind == "ito" else "b"
        return {"kind": self.kind, key: [str(v) for v in self._drift],
                "sigma": [[str(v) for v in r] for r in self.sigma]}

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


class ItoSDE(_SDE):
    """dx^i = f^i(x,t) dt + sigma^i_k(x,t) dw^k."""

    kind = "ito"

    @property
    def f(self) -> tuple:
        return self._drift


def diffusion_matrix(sigma) -> tuple:
    n = len(sigma)
    m = len(sigma[0]) if n else 0
    return tuple(tuple(sum((sigma[i][k] * sigma[j][k] for k in range(m)), ZERO) for j in range(n))
                 for i in range(n))


def _grad_along(vec, e: Expr, states) -> Expr:
    out = ZERO
    for c, x in zip(vec, states):
        if not c.iszero:
            out = out + c * differentiate(e, x)
    return out


def _hess_contract(D, e: Expr, states) -> Expr:
    out = ZERO
    for j, xj in enumerate(states):
        dj = differentiate(e, xj)
        if dj.iszero:
            continue
        for k, xk in enumerate(states):
            if not D[j][k].iszero:
                out = out + D[j][k] * differentiate(dj, xk)
    return out


_ITO_MODES = ("general", "fiber", "simple", "w")


def _check_shape(X: VectorField, ctx: Context, mode: str):
    noises = set(ctx.noises)
    if any(not noises.isdisjoint(c.free) for c in (X.tau,) + X.xi):
        raise ValueError("noise-dependent generators belong to the random-symmetry builders")
    if mode in ("fiber", "w") and not X.tau.free.isdisjoint(ctx.states):
        raise ValueError(f"{mode} mode needs tau = tau(t)")
    if mode in ("simple", "misawa-simple") and not X.tau.iszero:
        raise ValueError(f"{mode} mode needs tau = 0")
    if mode == "w" and X.B is None:
        raise ValueError("w mode needs a noise-mixing matrix B")
    if mode != "w" and X.B is not None and any(v != 0 for r in X.B for v in r):
        raise ValueError("a noise-mixing matrix is only allowed in w mode")
    if mode != "w" and any(not h.iszero for h in X.h):
        raise ValueError(f"{mode} mode does not act on the noises")


def ito_determining(sde: ItoSDE, X: VectorField, mode: str = "fiber") -> ResidualSystem:
    """Determining equations for a deterministic generator of an Ito equation.

    Residuals are labelled ("drift", i) and ("diff", i, k).
    """
    if mode not in _ITO_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    ctx = sde.ctx
    _check_shape(X, ctx, mode)
    xs, t = ctx.states, ctx.time
    f, sig, xi, tau = sde.f, sde.sigma, X.xi, X.tau
    D = sde.D()
    half = Fraction(1, 2)
    tau_t = differentiate(tau, t)
    general = mode == "general"
    tau_grad = [differentiate(tau, x) for x in xs] if general else None
    f_tau = _grad_along(f, tau, xs) if general else ZERO
    D_tau = _hess_contract(D, tau, xs) if general else ZERO
    res = []
    for i in range(ctx.n):
        r = (differentiate(xi[i], t) + _grad_along(f, xi[i], xs) - _grad_along(xi, f[i], xs)
             - differentiate(tau * f[i], t) + half * _hess_contract(D, xi[i], xs))
        if general:
            r = r - f[i] * f_tau - half * f[i] * D_tau
        res.append((("drift", i), r))
    for i in range(ctx.n):
        for k in range(ctx.m):
            col = sde.column(k)
            r = (_grad_along(col, xi[i], xs) - _grad_along(xi, sig[i][k], xs)
                 - tau * differentiate(sig[i][k], t) - half * tau_t * sig[i][k])
            if general:
                r = r - f[i] * sum((col[j] * tau_grad[j] for j in range(ctx.n)), ZERO)
            if mode == "w":
                r = r - sum((sig[i][p] * X.B[p][k] for p in range(ctx.m)), ZERO)
            res.append((("diff", i, k), r))
    return ResidualSystem(res, ctx, {"dx": "f dt + sigma dw"})


# ---------------------------------------------------------------- Fokker-Planck

@dataclass(frozen=True)
class FPCoefficients:
    """u_t = A^{ij} u_ij + B^i u_i + C u."""

    A: tuple
    B: tuple
    C: Expr


def fp_coefficients(sde: ItoSDE) -> FPCoefficients:
    ctx = sde.ctx
    D = sde.D()
    xs = ctx.states
    A = tuple(tuple(-Fraction(1, 2) * D[i][j] for j in range(ctx.n)) for i in range(ctx.n))
    B = tuple(sde.f[i] - sum((differentiate(D[i][j], xs[j]) for j in range(ctx.n)), ZERO)
              for i in range(ctx.n))
    C = ZERO
    for i, x in enumerate(xs):
        C = C + differentiate(sde.f[i], x)
        for j, y in enumerate(xs):
            C = C - Fraction(1, 2) * differentiate(differentiate(D[i][j], x), y)
    return FPCoefficients(A, B, C)


@dataclass
class FPSymmetryExtension:
    """tau(t) d_t + xi(x,t) d_x + beta(x,t) u d_u; beta defaults to -div xi."""

    base: VectorField
    beta: Expr | None = None

    def __post_init__(self):
        if self.beta is None:
            self.beta = -self.base.divergence()
        else:
            self.beta = as_expr(self.beta, self.base.ctx)

    @property
    def consistent(self) -> bool:
        return (self.beta + self.base.divergence()).iszero


def fp_determining(sde: ItoSDE, ext: FPSymmetryExtension | VectorField) -> ResidualSystem:
    if isinstance(ext, VectorField):
        ext = FPSymmetryExtension(ext)
    ctx = sde.ctx
    X = ext.base
    if not X.tau.free.isdisjoint(ctx.states):
        raise ValueError("FP extensions need tau = tau(t)")
    xs, t = ctx.states, ctx.time
    n = ctx.n
    c = fp_coefficients(sde)
    A, B, C = c.A, c.B, c.C
    xi, tau, beta = X.xi, X.tau, ext.beta
    dbeta = [differentiate(beta, x) for x in xs]
    res = []
    for i in range(n):
        for k in range(i, n):
            r = differentiate(tau * A[i][k], t) + _grad_along(xi, A[i][k], xs)
            for m_ in range(n):
                r = r - A[i][m_] * differentiate(xi[k], xs[m_]) - A[m_][k] * differentiate(xi[i], xs[m_])
            res.append((("A", i, k), r))
    for i in range(n):
        r = (differentiate(tau * B[i], t)
             - (differentiate(xi[i], t) + _grad_along(B, xi[i], xs) - _grad_along(xi, B[i], xs)))
        for k in range(n):
            r = r + A[i][k] * dbeta[k] + A[k][i] * dbeta[k]
        r = r - _hess_contract(A, xi[i], xs)
        res.append((("B", i), r))
    r = (differentiate(tau * C, t) + differentiate(beta, t) + _hess_contract(A, beta, xs)
         + _grad_along(B, beta, xs) + _grad_along(xi, C, xs))
    res.append((("C",), r))
    return ResidualSystem(res, ctx)


def gamma_obstruction(sde: ItoSDE, X: VectorField, policy: ZeroPolicy | None = None):
    """Gamma^i_k; an FP symmetry of the stated form is an Ito symmetry iff Gamma = 0."""
    rs = ito_determining(sde, X, "fiber").subset("diff")
    G = tuple(tuple(rs[("diff", i, k)] for k in range(sde.m)) for i in range(sde.n))
    return G, rs.all_zero(policy)


# ---------------------------------------------------------------- N-particle lift

def lift_n_particle(sde: ItoSDE, N: int) -> ItoSDE:
    """N copies of the equation driven by the same noises; states renamed x_a."""
    if N < 1:
        raise ValueError("N must be positive")
    ctx = sde.ctx
    names = [f"{x}_{a}" for a in range(1, N + 1) for x in ctx.states]
    clash = set(names) & (set(ctx.all_names()) - set(ctx.states))
    if clash:
        raise ValueError(f"lifted names clash with context: {sorted(clash)}")
    lctx = ctx.with_(states=tuple(names))
    f, sig = [], []
    for a in range(1, N + 1):
        ren = {x: lctx.sym(f"{x}_{a}") for x in ctx.states}
        f += [substitute(v, ren) for v in sde.f]
        sig += [[substitute(v, ren) for v in row] for row in sde.sigma]
    return ItoSDE(lctx, f, sig)


# ---------------------------------------------------------------- change of variables

def ito_change_of_variables(sde: ItoSDE, y, inverse, new_ctx: Context, s=None, time_inverse=None,
                            policy: ZeroPolicy | None = None) -> ItoSDE:
    """Rewrite the equation for y^i(x, t) with new time s(t).

    ``inverse`` maps each old state name to its expression in the new
    variables; ``time_inverse`` gives t(s) when ``s`` is not the identity.
    """
    ctx = sde.ctx
    t = ctx.time
    y = [as_expr(v, ctx) for v in y]
    if len(y) != ctx.n or new_ctx.n != ctx.n or new_ctx.m != ctx.m:
        raise ValueError("the map must preserve dimensions")
    if inverse is None or set(inverse) != set(ctx.states):
        raise ValueError("an inverse for every state variable is required")
    inv = {k: as_expr(v, new_ctx) for k, v in inverse.items()}
    s = ctx.t if s is None else as_expr(s, ctx)
    sdot = differentiate(s, t)
    policy = policy_for(ctx, policy)
    if not sdot.is_const or sdot.value <= 0:
        names = _free_syms([sdot])
        vals = evaluate(sdot, sample_points(names, policy), standins=_standins(policy, [sdot]))
        import numpy as np
        if not np.all(np.asarray(vals) > 0):
            raise ValueError("time map must be strictly increasing")
    xs = ctx.states
    D = sde.D()
    half = Fraction(1, 2)
    F = [(differentiate(v, t) + _grad_along(sde.f, v, xs) + half * _hess_contract(D, v, xs)) * power(sdot, -1)
         for v in y]
    root = sqrt(sdot)
    G = [[_grad_along(sde.column(k), v, xs) * power(root, -1) for k in range(ctx.m)] for v in y]
    back = dict(inv)
    if time_inverse is not None:
        back[t] = as_expr(time_inverse, new_ctx)
    elif new_ctx.time != t:
        if not (s - ctx.t).iszero:
            raise ValueError("a new time name needs time_inverse; otherwise keep t as the parameter")
        back[t] = new_ctx.t
    for k_old, k_new in zip(ctx.noises, new_ctx.noises):
        if k_old != k_new:
            back[k_old] = new_ctx.sym(k_new)
    F = [substitute(v, back) for v in F]
    G = [[substitute(v, back) for v in row] for row in G]
    # y(x(y)) must be the identity
    check = [substitute(v, back) - new_ctx.sym(nm) for v, nm in zip(y, new_ctx.states)]
    if not all(is_zero_many(check, policy_for(new_ctx, policy))):
        raise ValueError("inverse map does not invert y")
    out = ItoSDE(new_ctx, F, G)
    out.time_map = s
    return out


def _standins(policy, exprs):
    from .expr import StandIns, _afn_degrees
    return StandIns(policy.seed, _afn_degrees(exprs))
