"""Vector fields, brackets, prolongation and symmetries of deterministic systems."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .expr import (
    ONE, ZERO, Context, Expr, ResidualSystem, Sym, ZeroPolicy, differentiate, is_zero_many,
    log, policy_for, power, sym,
)

__all__ = [
    "VectorField", "DynSystem", "SecondOrderODE", "Prolongation", "HojmanResult",
    "OrbitalResult", "as_expr", "lie_bracket", "lie_poisson", "prolong", "onshell_residual",
    "dyn_determining", "orbital_residual", "hojman_charge", "matrix", "antisymmetric",
]


def as_expr(v, ctx: Context) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, str):
        return ctx.parse(v)
    from .expr import const
    return const(v)


def matrix(rows, ctx: Context) -> tuple:
    return tuple(tuple(as_expr(v, ctx) for v in row) for row in rows)


def antisymmetric(B) -> bool:
    m = len(B)
    return all(B[i][j] == -B[j][i] for i in range(m) for j in range(m))


def _matrix_entry(v):
    """Rational constant, or an Expr in solver unknowns only (ansatz matrices)."""
    if not isinstance(v, Expr):
        return Fraction(v)
    if v.is_const:
        return v.value
    if all(type(a) is Sym and a.kind == "unknown" for a in v.atoms()):
        return v
    raise ValueError(f"B entries must be constants, got {v}")


def _frac_matrix(B) -> tuple:
    return tuple(tuple(_matrix_entry(v) for v in row) for row in B)


class VectorField:
    """X = tau d/dt + xi^i d/dx^i + h^k d/dw^k over a context.

    ``B`` is an optional constant antisymmetric rational matrix; when given,
    the noise components are ``h = B w``.
    """

    def __init__(self, ctx: Context, tau=0, xi=None, h=None, B=None):
        self.ctx = ctx
        self.tau = as_expr(tau, ctx)
        xi = [0] * ctx.n if xi is None else list(xi)
        if len(xi) != ctx.n:
            raise ValueError(f"expected {ctx.n} state components, got {len(xi)}")
        self.xi = tuple(as_expr(v, ctx) for v in xi)
        self.B = None
        if B is not None:
            B = _frac_matrix(B)
            if len(B) != ctx.m or any(len(r) != ctx.m for r in B):
                raise ValueError(f"B must be {ctx.m}x{ctx.m}")
            if not antisymmetric(B):
                raise ValueError("B must be antisymmetric")
            self.B = B
            bw = tuple(sum((ctx.w[j] * B[k][j] for j in range(ctx.m)), ZERO) for k in range(ctx.m))
            if h is not None:
                hh = tuple(as_expr(v, ctx) for v in h)
                if hh != bw:
                    raise ValueError("h must equal B w when B is given")
            h = bw
        h = [0] * ctx.m if h is None else list(h)
        if len(h) != ctx.m:
            raise ValueError(f"expected {ctx.m} noise components, got {len(h)}")
        self.h = tuple(as_expr(v, ctx) for v in h)

    # -- action on functions
    def pairs(self, vars=None):
        ctx = self.ctx
        out = []
        if ctx.time and (vars is None or ctx.time in vars):
            out.append((ctx.time, self.tau))
        for name, c in zip(ctx.states, self.xi):
            if vars is None or name in vars:
                out.append((name, c))
        for name, c in zip(ctx.noises, self.h):
            if vars is None or name in vars:
                out.append((name, c))
        return out

    def __call__(self, e: Expr, vars=None) -> Expr:
        e = as_expr(e, self.ctx)
        out = ZERO
        for name, c in self.pairs(vars):
            if not c.iszero:
                out = out + c * differentiate(e, name)
        return out

    apply = __call__

    # -- linear structure
    def _combine(self, other, fn) -> "VectorField":
        B = None
        if self.B is not None or other.B is not None:
            zero = ((Fraction(0),) * self.ctx.m,) * self.ctx.m
            b1, b2 = self.B or zero, other.B or zero
            B = tuple(tuple(fn(b1[i][j], b2[i][j]) for j in range(self.ctx.m)) for i in range(self.ctx.m))
        return VectorField(self.ctx, fn(self.tau, other.tau),
                           [fn(a, b) for a, b in zip(self.xi, other.xi)],
                           None if B is not None else [fn(a, b) for a, b in zip(self.h, other.h)], B)

    def __add__(self, other):
        return self._combine(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._combine(other, lambda a, b: a - b)

    def scale(self, c) -> "VectorField":
        """Multiply by a function; B is kept only for rational constants."""
        c = as_expr(c, self.ctx)
        if self.B is not None and c.is_const:
            B = tuple(tuple(v * c.value for v in row) for row in self.B)
            return VectorField(self.ctx, self.tau * c, [v * c for v in self.xi], B=B)
        return VectorField(self.ctx, self.tau * c, [v * c for v in self.xi], [v * c for v in self.h])

    def __rmul__(self, c):
        return self.scale(c)

    def __neg__(self):
        return self.scale(-1)

    def __eq__(self, other):
        if not isinstance(other, VectorField):
            return NotImplemented
        return self.tau == other.tau and self.xi == other.xi and self.h == other.h

    def __hash__(self):
        return hash((self.tau, self.xi, self.h))

    @property
    def components(self) -> tuple:
        return (self.tau,) + self.xi + self.h

    @property
    def iszero(self) -> bool:
        return all(c.iszero for c in self.components)

    @property
    def noise_free(self) -> bool:
        noises = set(self.ctx.noises)
        return all(noises.isdisjoint(c.free) for c in self.components if c is not None)

    def divergence(self) -> Expr:
        out = ZERO
        for name, c in zip(self.ctx.states, self.xi):
            out = out + differentiate(c, name)
        return out

    def __str__(self):
        parts = [f"({c})*d{name}" for name, c in self.pairs() if not c.iszero]
        return " + ".join(parts) if parts else "0"

    def __repr__(self):
        return f"VectorField({self})"

    def to_dict(self) -> dict:
        d = {"tau": str(self.tau), "xi": [str(v) for v in self.xi]}
        if self.ctx.m:
            d["h"] = [str(v) for v in self.h]
        if self.B is not None:
            d["B"] = [[str(v) for v in row] for row in self.B]
        return d


def lie_bracket(X: VectorField, Y: VectorField, vars=None) -> VectorField:
    """[X, Y]^a = X(Y^a) - Y(X^a), components and derivatives restricted to ``vars``."""
    if X.ctx.n != Y.ctx.n or X.ctx.m != Y.ctx.m:
        raise ValueError("dimension mismatch")
    ctx = X.ctx
    names = [n for n, _ in X.pairs(vars)]

    def comp(a, b):
        return X(b, names) - Y(a, names)

    tau = comp(X.tau, Y.tau) if ctx.time in names else ZERO
    xi = [comp(a, b) if nm in names else ZERO for nm, a, b in zip(ctx.states, X.xi, Y.xi)]
    if X.B is not None and Y.B is not None and all(n in names for n in ctx.noises):
        m = ctx.m
        B = tuple(tuple(sum((Y.B[i][k] * X.B[k][j] - X.B[i][k] * Y.B[k][j] for k in range(m)), Fraction(0))
                        for j in range(m)) for i in range(m))
        return VectorField(ctx, tau, xi, B=B)
    h = [comp(a, b) if nm in names else ZERO for nm, a, b in zip(ctx.noises, X.h, Y.h)]
    return VectorField(ctx, tau, xi, h)


@dataclass(frozen=True)
class DynSystem:
    """dx^i/dt = f^i(x, t)."""

    ctx: Context
    f: tuple

    def __post_init__(self):
        f = tuple(as_expr(v, self.ctx) for v in self.f)
        if len(f) != self.ctx.n:
            raise ValueError(f"expected {self.ctx.n} components")
        for v in f:
            if not v.free.isdisjoint(self.ctx.noises):
                raise ValueError("a dynamical system cannot depend on noise variables")
        object.__setattr__(self, "f", f)

    def field(self, with_time: bool = False) -> VectorField:
        return VectorField(self.ctx, ONE if with_time else ZERO, self.f)


def lie_poisson(f, g, ctx: Context | None = None) -> tuple:
    """{f, g}^i = f^j d_j g^i - g^j d_j f^i."""
    if isinstance(f, DynSystem):
        ctx = f.ctx
        f = f.f
    if isinstance(g, DynSystem):
        ctx = g.ctx
        g = g.f
    if len(f) != len(g) or len(f) != ctx.n:
        raise ValueError("dimension mismatch")
    out = []
    for i in range(ctx.n):
        v = ZERO
        for j, xj in enumerate(ctx.states):
            v = v + f[j] * differentiate(g[i], xj) - g[j] * differentiate(f[i], xj)
        out.append(v)
    return tuple(out)


_DYN_MODES = ("general", "fiber", "time-preserving", "lpti")


def dyn_determining(f: DynSystem, X: VectorField, mode: str = "general") -> ResidualSystem:
    """Symmetry residuals of dx/dt = f for X = tau d_t + phi^i d_i.

    residual^i = phi^i_t + f.grad(phi^i) - phi.grad(f^i) - tau f^i_t - (Z_f tau) f^i
    """
    ctx = f.ctx
    if mode not in _DYN_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not X.noise_free:
        raise ValueError("generator depends on noise variables")
    if mode == "fiber" and not X.tau.free.isdisjoint(ctx.states):
        raise ValueError("fiber mode needs tau = tau(t)")
    if mode in ("time-preserving", "lpti") and not X.tau.iszero:
        raise ValueError(f"{mode} mode needs tau = 0")
    if mode == "lpti" and any(not differentiate(p, ctx.time).iszero for p in X.xi):
        raise ValueError("lpti mode needs time-independent components")
    Zf = f.field(with_time=True)
    Ztau = Zf(X.tau)
    br = lie_poisson(f.f, X.xi, ctx)
    res = []
    for i in range(ctx.n):
        r = differentiate(X.xi[i], ctx.time) + br[i] - Ztau * f.f[i]
        if not X.tau.iszero:
            r = r - X.tau * differentiate(f.f[i], ctx.time)
        res.append((("sym", i), r))
    return ResidualSystem(res, ctx)


@dataclass
class OrbitalResult:
    residual: tuple
    minors: list
    parallel: bool


def orbital_residual(f: DynSystem, X: VectorField, policy: ZeroPolicy | None = None) -> OrbitalResult:
    """r = phi_t + {phi, f}; X is orbital iff r stays parallel to f."""
    ctx = f.ctx
    if not X.tau.iszero:
        raise ValueError("orbital symmetries are time-preserving (tau = 0)")
    br = lie_poisson(X.xi, f.f, ctx)
    r = tuple(differentiate(p, ctx.time) + b for p, b in zip(X.xi, br))
    minors = [r[i] * f.f[j] - r[j] * f.f[i] for i in range(ctx.n) for j in range(i + 1, ctx.n)]
    verdicts = is_zero_many(minors, policy_for(ctx, policy)) if minors else []
    return OrbitalResult(r, minors, all(verdicts))


# ---------------------------------------------------------------- prolongation

def jet_name(u: str, x: str, k: int) -> str:
    return u if k == 0 else f"{u}_{x * k}"


@dataclass
class Prolongation:
    """Prolonged field on the jet space of u^a(x); psi[(a, k)] is the d/du^a_k coefficient."""

    base: VectorField
    order: int
    ctx: Context
    psi: dict

    def jet(self, a: int, k: int) -> Expr:
        u = self.base.ctx.states[a]
        return sym(jet_name(u, self.base.ctx.time, k), "state" if k == 0 else "jet")

    def __call__(self, e: Expr) -> Expr:
        ctx = self.base.ctx
        out = self.base.tau * differentiate(e, ctx.time)
        for (a, k), p in self.psi.items():
            if not p.iszero:
                out = out + p * differentiate(e, jet_name(ctx.states[a], ctx.time, k))
        return out


MAX_PROLONGATION = 4


def _total_x(e: Expr, ctx: Context, order: int) -> Expr:
    x = ctx.time
    out = differentiate(e, x)
    for u in ctx.states:
        for k in range(order + 1):
            name = jet_name(u, x, k)
            d = differentiate(e, name)
            if not d.iszero:
                out = out + sym(jet_name(u, x, k + 1), "jet") * d
    return out


def prolong(X: VectorField, order: int) -> Prolongation:
    """k-th prolongation of X = xi(x,u) d_x + phi^a(x,u) d_u^a.

    The context's time slot is the single independent variable x and its
    states are the dependent variables; jets are named u_x, u_xx, ...
    """
    if not 0 <= order <= MAX_PROLONGATION:
        raise ValueError(f"prolongation order must be in 0..{MAX_PROLONGATION}")
    ctx = X.ctx
    if ctx.time is None:
        raise ValueError("prolongation needs an independent variable")
    if ctx.m:
        raise ValueError("prolongation supports one independent variable and no noises")
    x = ctx.time
    jets = tuple((jet_name(u, x, k), "jet") for u in ctx.states for k in range(1, order + 2))
    jctx = ctx.with_(extra=tuple(p for p in ctx.extra if p[0] not in dict(jets)) + jets)
    Dxi = _total_x(X.tau, ctx, 0)
    psi = {}
    for a, u in enumerate(ctx.states):
        cur = X.xi[a]
        psi[(a, 0)] = cur
        for k in range(order):
            cur = _total_x(cur, ctx, k) - sym(jet_name(u, x, k + 1), "jet") * Dxi
            psi[(a, k + 1)] = cur
    return Prolongation(X, order, jctx, psi)


def _solve_linear_for(delta: Expr, name: str) -> Expr:
    a = differentiate(delta, name)
    if a.iszero or name in a.free:
        raise ValueError(f"equation is not linear in its highest derivative {name}")
    from .expr import substitute
    b = substitute(delta, {name: 0})
    return -b * power(a, -1)


def onshell_residual(X: VectorField, delta, order: int | None = None) -> ResidualSystem:
    """pr X(Delta) with the highest derivative eliminated using Delta = 0.

    Scalar ODEs only; Delta must be linear in its highest derivative.
    """
    ctx = X.ctx
    if ctx.n != 1:
        raise ValueError("on-shell reduction supports a single dependent variable")
    u, x = ctx.states[0], ctx.time
    if isinstance(delta, str):
        jets = tuple((jet_name(u, x, k), "jet") for k in range(1, MAX_PROLONGATION + 2))
        delta = ctx.with_(extra=tuple(p for p in ctx.extra if p[0] not in dict(jets)) + jets).parse(delta)
    if order is None:
        order = max((k for k in range(MAX_PROLONGATION + 1) if jet_name(u, x, k) in delta.free), default=0)
    pr = prolong(X, order)
    top = jet_name(u, x, order)
    sol = _solve_linear_for(delta, top)
    from .expr import substitute
    r = substitute(pr(delta), {top: sol})
    return ResidualSystem([(("onshell",), r)], pr.ctx, {top: sol})


# ---------------------------------------------------------------- Hojman

@dataclass(frozen=True)
class SecondOrderODE:
    """x''^i = F^i(x, x', t); velocities are declared in the context."""

    ctx: Context
    F: tuple

    def __post_init__(self):
        if len(self.ctx.velocities) != self.ctx.n:
            raise ValueError("declare one velocity per state")
        F = tuple(as_expr(v, self.ctx) for v in self.F)
        if len(F) != self.ctx.n:
            raise ValueError(f"expected {self.ctx.n} components")
        for v in F:
            if not v.free.isdisjoint(self.ctx.noises):
                raise ValueError("noise dependence is not allowed")
        object.__setattr__(self, "F", F)

    def Dt(self, e: Expr) -> Expr:
        ctx = self.ctx
        out = differentiate(e, ctx.time) if ctx.time else ZERO
        for x, v, F in zip(ctx.states, ctx.velocities, self.F):
            out = out + sym(v, "velocity") * differentiate(e, x) + F * differentiate(e, v)
        return out


@dataclass
class HojmanResult:
    J: Expr
    lambda_residuals: ResidualSystem
    symmetry_residuals: ResidualSystem
    conservation: ResidualSystem


def hojman_charge(ode: SecondOrderODE, phi, lam) -> HojmanResult:
    """Conserved quantity from a (generalized) symmetry phi(x, x', t) and multiplier lam."""
    ctx = ode.ctx
    phi = tuple(as_expr(p, ctx) for p in phi)
    lam = as_expr(lam, ctx)
    if lam.iszero:
        raise ValueError("lambda must not vanish identically")
    Dphi = [ode.Dt(p) for p in phi]
    J = ZERO
    for x, v, p, dp in zip(ctx.states, ctx.velocities, phi, Dphi):
        J = J + differentiate(lam * p, x) + differentiate(lam * dp, v)
    J = J * power(lam, -1)
    lres = ode.Dt(log(lam))
    for v, F in zip(ctx.velocities, ode.F):
        lres = lres + differentiate(F, v)
    sres = []
    for i in range(ctx.n):
        r = ode.Dt(Dphi[i])
        for j, (x, v) in enumerate(zip(ctx.states, ctx.velocities)):
            r = r - phi[j] * differentiate(ode.F[i], x) - Dphi[j] * differentiate(ode.F[i], v)
        sres.append((("sym", i), r))
    return HojmanResult(
        J,
        ResidualSystem([(("lambda",), lres)], ctx),
        ResidualSystem(sres, ctx),
        ResidualSystem([(("DtJ",), ode.Dt(J))], ctx),
    )
