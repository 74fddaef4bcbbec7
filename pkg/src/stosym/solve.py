"""Ansatz-based linear solver for determining systems.

A generator is written as a linear combination of user-declared basis
functions with unknown rational coefficients.  Because determining equations
are linear in the generator, every residual is linear in the unknowns; the
coefficient of each unknown is evaluated at sampled points and the resulting
matrix is reduced to its nullspace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .expr import (
    ZERO, Context, Expr, NotRationalClosed, ResidualSystem, StandIns, ZeroPolicy, const,
    differentiate, evaluate, is_zero_many, lambdify, policy_for, sample_point, substitute, sym,
    to_str, _afn_degrees, _free_syms,
)
from .fields import DynSystem, VectorField, as_expr, dyn_determining
from .ito import ItoSDE, _SDE, ito_determining
from .random import random_determining
from .strato import StratSDE, strat_determining

__all__ = [
    "Ansatz", "LinearSystem", "SymmetryBasis", "NonlinearAnsatz", "VerificationError",
    "DimensionBoundViolation", "assemble_linear_system", "nullspace", "rref",
    "solve_symmetries", "resolve_builder", "polynomial_basis",
]


class NonlinearAnsatz(ValueError):
    """Residuals are not linear and homogeneous in the ansatz unknowns."""


class VerificationError(RuntimeError):
    """A solved basis element failed the residual re-check."""


class DimensionBoundViolation(AssertionError):
    """Solver output exceeds a known bound on the symmetry algebra dimension."""


# ---------------------------------------------------------------- ansatz

@dataclass(frozen=True)
class _Slot:
    part: str   # "tau" | "xi" | "h" | "B"
    index: object
    basis: Expr | None

    def label(self, ctx: Context) -> str:
        if self.part == "tau":
            return f"tau:{to_str(self.basis)}"
        if self.part == "xi":
            return f"xi[{ctx.states[self.index]}]:{to_str(self.basis)}"
        if self.part == "h":
            return f"h[{ctx.noises[self.index]}]:{to_str(self.basis)}"
        i, j = self.index
        return f"B[{i},{j}]"


class Ansatz:
    """Finite-dimensional family of generators.

    ``tau`` is a list of basis functions for the time component, ``xi`` one list
    per state variable, ``h`` one list per noise variable (random generators
    only) and ``B`` a list of index pairs (i, j), i < j, whose antisymmetric
    noise-mixing entries are free.
    """

    def __init__(self, ctx: Context, tau=(), xi=None, h=None, B=(), prefix: str = "c"):
        self.ctx = ctx
        xi = [()] * ctx.n if xi is None else list(xi)
        h = [()] * ctx.m if h is None else list(h)
        if len(xi) != ctx.n or len(h) != ctx.m:
            raise ValueError("one basis list per state (and per noise) variable is required")
        slots = [_Slot("tau", None, as_expr(b, ctx)) for b in tau]
        for i, lst in enumerate(xi):
            slots += [_Slot("xi", i, as_expr(b, ctx)) for b in lst]
        for k, lst in enumerate(h):
            slots += [_Slot("h", k, as_expr(b, ctx)) for b in lst]
        for i, j in B:
            if not (0 <= i < j < ctx.m):
                raise ValueError(f"B entry ({i}, {j}) must satisfy 0 <= i < j < m")
            slots.append(_Slot("B", (i, j), None))
        if B and any(s.part == "h" for s in slots):
            raise ValueError("give either free noise components or a mixing matrix, not both")
        taken = set(ctx.all_names())
        names, k = [], 0
        while len(names) < len(slots):
            k += 1
            nm = f"{prefix}{k}"
            if nm not in taken:
                names.append(nm)
        for s in slots:
            if s.basis is not None and any(a.kind == "unknown" for a in _syms(s.basis)):
                raise ValueError("basis functions must not contain unknowns")
        self.slots = tuple(slots)
        self.unknowns = tuple(names)
        self.has_B = bool(B)

    def __len__(self):
        return len(self.slots)

    @property
    def labels(self) -> list:
        return [s.label(self.ctx) for s in self.slots]

    def field(self, coeffs) -> VectorField:
        """Generator for the given coefficient vector (numbers or Exprs)."""
        ctx = self.ctx
        coeffs = [c if isinstance(c, Expr) else const(c) for c in coeffs]
        if len(coeffs) != len(self.slots):
            raise ValueError(f"expected {len(self.slots)} coefficients")
        tau = ZERO
        xi = [ZERO] * ctx.n
        h = [ZERO] * ctx.m
        B = [[ZERO] * ctx.m for _ in range(ctx.m)] if self.has_B else None
        for s, c in zip(self.slots, coeffs):
            if s.part == "tau":
                tau = tau + c * s.basis
            elif s.part == "xi":
                xi[s.index] = xi[s.index] + c * s.basis
            elif s.part == "h":
                h[s.index] = h[s.index] + c * s.basis
            else:
                i, j = s.index
                B[i][j] = B[i][j] + c
                B[j][i] = B[j][i] - c
        if B is not None:
            return VectorField(ctx, tau, xi, B=B)
        return VectorField(ctx, tau, xi, h)

    def generic(self) -> VectorField:
        return self.field([sym(nm, "unknown") for nm in self.unknowns])


def _syms(e: Expr):
    from .expr import Sym
    return [a for a in e.atoms() if type(a) is Sym]


def polynomial_basis(ctx: Context, names, degree: int) -> list:
    """All monomials of total degree <= ``degree`` in the given variables."""
    from itertools import combinations_with_replacement
    out = [const(1)]
    vs = [ctx.sym(n) for n in names]
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(vs, d):
            m = const(1)
            for v in combo:
                m = m * v
            out.append(m)
    return out


# ---------------------------------------------------------------- assembly

@dataclass
class LinearSystem:
    matrix: list            # rows of Fractions (exact) or floats
    exact: bool
    columns: tuple          # unknown names
    rows: list              # (residual label, point index)
    params: dict            # parameter values held fixed during assembly

    @property
    def shape(self) -> tuple:
        return (len(self.matrix), len(self.columns))


def _rational(v: float) -> Fraction:
    return Fraction(round(v * 1000), 1000)


def _fixed_params(ctx: Context, policy: ZeroPolicy) -> dict:
    """Bound parameters keep their values; unbound ones are drawn once."""
    out = {}
    pt = sample_point(list(ctx.params), policy, 0)
    for p in ctx.params:
        if p in policy.bindings:
            v = policy.bindings[p]
            out[p] = Fraction(v) if isinstance(v, (int, Fraction, str)) else Fraction(float(v))
        else:
            out[p] = _rational(pt[p])
    return out


def assemble_linear_system(rs: ResidualSystem, unknowns, policy: ZeroPolicy | None = None,
                           factor: int = 3, exact: bool | None = None) -> LinearSystem:
    """Sampled coefficient matrix of a residual system linear in ``unknowns``.

    Rows are (residual, sample point) pairs; at least ``factor`` times as many
    rows as columns are produced.  Exact rational arithmetic is used whenever
    every coefficient is rational-closed, float64 otherwise.
    """
    unknowns = tuple(unknowns)
    ctx = rs.ctx
    policy = policy_for(ctx, policy)
    params = _fixed_params(ctx, policy) if ctx is not None else {}
    if not unknowns:
        return LinearSystem([], True, (), [], params)
    uset = set(unknowns)
    zero_map = {u: ZERO for u in unknowns}
    coeffs, labels, consts = [], [], []
    for lab, e in rs:
        row = []
        for u in unknowns:
            c = differentiate(e, u)
            if not uset.isdisjoint(c.free):
                raise NonlinearAnsatz(f"residual {lab} is nonlinear in {u}")
            row.append(c)
        consts.append(substitute(e, zero_map))
        if any(not c.iszero for c in row):
            coeffs.append(row)
            labels.append(lab)
    nonhom = [lab for (lab, _), v in zip(rs, is_zero_many(consts, policy)) if not v]
    if nonhom:
        raise NonlinearAnsatz(f"residuals {nonhom} have a nonzero part free of unknowns")
    ncol = len(unknowns)
    if not coeffs:
        return LinearSystem([], True, unknowns, [], params)
    flat = [c for row in coeffs for c in row]
    names = [n for n in _free_syms(flat) if n not in params]
    npts = max(math.ceil(factor * ncol / len(coeffs)), ncol + 2)
    standins = StandIns(policy.seed, _afn_degrees(flat))
    if exact is not False:
        try:
            mat, rows = _assemble_exact(coeffs, labels, names, params, policy, npts, standins)
            return LinearSystem(mat, True, unknowns, rows, params)
        except NotRationalClosed:
            if exact:
                raise
    mat, rows = _assemble_float(coeffs, labels, names, params, policy, npts, standins)
    return LinearSystem(mat, False, unknowns, rows, params)


def _assemble_exact(coeffs, labels, names, params, policy, npts, standins):
    mat, rows = [], []
    for k in range(npts):
        for attempt in range(policy.max_resamples + 1):
            pt = {n: _rational(v) for n, v in sample_point(names, policy, k, attempt).items()}
            pt.update(params)
            try:
                block = [[evaluate(c, pt, "exact", standins) for c in row] for row in coeffs]
                break
            except ZeroDivisionError:
                continue
        else:
            raise RuntimeError("no regular rational sample point found")
        for lab, vals in zip(labels, block):
            mat.append(vals)
            rows.append((lab, k))
    return mat, rows


def _assemble_float(coeffs, labels, names, params, policy, npts, standins):
    flat = [c for row in coeffs for c in row]
    env_names = names + list(params)
    fn = lambdify(flat, env_names, standins)
    ncol = len(coeffs[0])
    mat, rows = [], []
    for k in range(npts):
        for attempt in range(policy.max_resamples + 1):
            pt = sample_point(names, policy, k, attempt)
            vals = fn(*[pt[n] for n in names], *[float(params[p]) for p in params])
            vals = np.asarray([float(v) for v in vals])
            if np.all(np.isfinite(vals)):
                break
        else:
            raise RuntimeError("no regular sample point found")
        block = vals.reshape(len(coeffs), ncol)
        for lab, r in zip(labels, block):
            mat.append([float(v) for v in r])
            rows.append((lab, k))
    return mat, rows


# ---------------------------------------------------------------- linear algebra

def rref(rows, exact: bool = True, tol: float = 1e-10):
    """Reduced row echelon form; returns (matrix, pivot columns)."""
    A = [list(r) for r in rows]
    if not A:
        return [], []
    ncol = len(A[0])
    pivots, r = [], 0
    for c in range(ncol):
        if r == len(A):
            break
        if exact:
            p = next((i for i in range(r, len(A)) if A[i][c] != 0), None)
        else:
            cand = max(range(r, len(A)), key=lambda i: abs(A[i][c]))
            scale = max((abs(v) for row in A for v in row), default=0.0)
            p = cand if abs(A[cand][c]) > tol * max(scale, 1.0) else None
        if p is None:
            continue
        A[r], A[p] = A[p], A[r]
        lead = A[r][c]
        A[r] = [v / lead for v in A[r]]
        for i in range(len(A)):
            if i != r and A[i][c] != 0:
                f = A[i][c]
                A[i] = [a - f * b for a, b in zip(A[i], A[r])]
        pivots.append(c)
        r += 1
    return A[:r], pivots


def nullspace(A, exact: bool | None = None, rtol: float = 1e-8) -> list:
    """RREF-normalized basis of {v : A v = 0}.

    Exact Gaussian elimination over the rationals for Fraction input; for float
    input the rows are normalized and singular values below ``rtol`` times the
    largest are treated as zero.
    """
    A = [list(r) for r in A]
    if exact is None:
        exact = all(isinstance(v, (int, Fraction)) for r in A for v in r)
    if not A:
        return []
    ncol = len(A[0])
    if ncol == 0:
        return []
    if exact:
        R, piv = rref([[Fraction(v) for v in r] for r in A], exact=True)
        free = [c for c in range(ncol) if c not in piv]
        basis = []
        for fc in free:
            v = [Fraction(0)] * ncol
            v[fc] = Fraction(1)
            for row, pc in zip(R, piv):
                v[pc] = -row[fc]
            basis.append(v)
        return rref(basis, exact=True)[0]
    M = np.asarray(A, dtype=float)
    norms = np.linalg.norm(M, axis=1)
    M = M[norms > 0] / norms[norms > 0, None]
    if M.shape[0] == 0:
        N = np.eye(ncol)
    else:
        _, s, vt = np.linalg.svd(M)
        rank = int(np.sum(s > rtol * s[0])) if s.size else 0
        N = vt[rank:]
    if N.shape[0] == 0:
        return []
    return rref(N.tolist(), exact=False, tol=1e-9)[0]


def _snap(v: float, max_den: int = 10**6) -> Fraction:
    q = Fraction(v).limit_denominator(max_den)
    return q if abs(float(q) - v) <= 1e-11 * max(1.0, abs(v)) else Fraction(v)


# ---------------------------------------------------------------- driver

@dataclass
class SymmetryBasis:
    fields: list
    dimension: int
    rref: list
    columns: tuple
    labels: list
    exact: bool
    params: dict = field(default_factory=dict)
    mode: str = ""

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "exact": self.exact,
            "columns": list(self.labels),
            "rref": [[str(v) for v in row] for row in self.rref],
            "fields": [str(X) for X in self.fields],
            "params": {k: str(v) for k, v in sorted(self.params.items())},
        }


_RANDOM = {"random-simple": "simple", "random-fiber": "fiber", "random-general-w": "general-w"}


def resolve_builder(system, mode) -> Callable:
    """Determining-equation builder (system, X) -> ResidualSystem for a mode name."""
    if callable(mode):
        return mode
    if mode in _RANDOM:
        kind = "ito" if isinstance(system, ItoSDE) else "strat"
        sub = _RANDOM[mode]
        return lambda s, X: random_determining(kind, s, X, sub)
    if isinstance(system, ItoSDE):
        return lambda s, X: ito_determining(s, X, mode)
    if isinstance(system, StratSDE):
        return lambda s, X: strat_determining(s, X, mode)
    if isinstance(system, DynSystem):
        return lambda s, X: dyn_determining(s, X, mode)
    raise TypeError(f"no determining builder for {type(system).__name__}")


def _full_rank_diffusion(sde: _SDE, params: dict, policy: ZeroPolicy) -> bool:
    if sde.n > sde.m:
        return False
    names = [n for n in _free_syms([v for r in sde.sigma for v in r]) if n not in params]
    pt = sample_point(names, policy, 0)
    pt.update({k: float(v) for k, v in params.items()})
    standins = StandIns(policy.seed, _afn_degrees([v for r in sde.sigma for v in r]))
    S = np.array([[float(evaluate(v, pt, standins=standins)) for v in r] for r in sde.sigma])
    return bool(np.all(np.isfinite(S))) and np.linalg.matrix_rank(S) == sde.n


def _check_bounds(system, mode, dim: int, params: dict, policy: ZeroPolicy):
    """Known dimension bounds for deterministic symmetries of Ito equations with
    full-rank diffusion: r <= n + 2 overall and r <= n for spatial generators."""
    if not isinstance(system, ItoSDE) or mode not in ("general", "fiber", "simple"):
        return
    if not _full_rank_diffusion(system, params, policy):
        return
    bound = system.n if mode == "simple" else system.n + 2
    if dim > bound:
        raise DimensionBoundViolation(
            f"solver returned dimension {dim} > {bound} for a {system.n}-dimensional equation")


def solve_symmetries(system, mode, ansatz: Ansatz, policy: ZeroPolicy | None = None,
                     verify_samples: int = 64, verify_seed: int | None = None,
                     exact: bool | None = None) -> SymmetryBasis:
    """Symmetries of ``system`` inside ``ansatz``; the dimension is relative to the ansatz."""
    builder = resolve_builder(system, mode)
    ctx = ansatz.ctx
    policy = policy_for(ctx, policy)
    rs = builder(system, ansatz.generic())
    ls = assemble_linear_system(rs, ansatz.unknowns, policy, exact=exact)
    if ls.matrix:
        basis = nullspace(ls.matrix, exact=ls.exact)
    else:
        basis = [[Fraction(int(i == j)) for j in range(len(ansatz))] for i in range(len(ansatz))]
    vpol = policy.replace(samples=verify_samples,
                          seed=verify_seed if verify_seed is not None else policy.seed + 7919,
                          bindings={**policy.bindings, **{k: v for k, v in ls.params.items()}})

    def failures(rows):
        out = []
        for v in rows:
            bad = [lab for lab, ok in builder(system, ansatz.field(v)).verdicts(vpol) if not ok]
            if bad:
                out.append((v, bad))
        return out

    if ls.exact:
        bad = failures(basis)
    else:
        raw = [[Fraction(v) for v in row] for row in basis]
        # small-denominator snapping first, the raw float values if that fails
        basis = rref([[_snap(v) for v in row] for row in basis], exact=True)[0]
        bad = failures(basis) if len(basis) == len(raw) else [(None, None)]
        if bad:
            basis, bad = raw, failures(raw)
    if bad:
        v, labs = bad[0]
        raise VerificationError(f"basis element {[str(c) for c in v]} fails residuals {labs}")
    fields = [ansatz.field(v) for v in basis]
    _check_bounds(system, mode, len(basis), ls.params, policy)
    return SymmetryBasis(fields, len(basis), basis, ansatz.unknowns, ansatz.labels, ls.exact,
                         dict(ls.params), mode if isinstance(mode, str) else getattr(mode, "__name__", ""))
