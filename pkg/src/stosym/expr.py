"""Symbolic expressions kept in a canonical polynomial-over-atoms form.

An :class:`Expr` is a map from monomials to exact rational coefficients.
A monomial is a sorted tuple of ``(atom, exponent)`` pairs, exponents being
nonzero rationals.  Atoms are symbols, elementary functions, abstract
functions, opaque powers of sums and formal integrals; atom arguments are
themselves canonical, so structural equality of two normalized expressions
is a plain dictionary comparison.
"""

from __future__ import annotations

import math
import re
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product as _iproduct
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "Expr", "Atom", "Sym", "Fn", "AFn", "Opaque", "Integral", "Context",
    "ZeroPolicy", "Verdict", "StandIns", "ParseError", "UndeclaredIdentifier",
    "UnboundSymbol", "NotRationalClosed", "AllSamplesSingular",
    "const", "sym", "sin", "cos", "tan", "exp", "log", "sqrt", "func",
    "integral", "parse", "to_str", "differentiate", "substitute", "normalize",
    "evaluate", "is_zero", "power",
]

KINDS = ("indep", "state", "time", "noise", "velocity", "jet", "param", "unknown", "dummy")
_KIND_RANK = {k: i for i, k in enumerate(KINDS)}
ELEMENTARY = ("sin", "cos", "tan", "exp", "log", "sqrt")


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 1, col: int = 1):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class UndeclaredIdentifier(ParseError):
    def __init__(self, name: str, line: int = 1, col: int = 1):
        super().__init__(f"undeclared identifier {name!r}", line, col)
        self.name = name


class UnboundSymbol(KeyError):
    pass


class NotRationalClosed(ValueError):
    pass


class AllSamplesSingular(RuntimeError):
    pass


def _q(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, float):
        return Fraction(v).limit_denominator(10**12)
    raise TypeError(f"cannot convert {v!r} to a rational")


# ---------------------------------------------------------------- atoms

class Atom:
    __slots__ = ("key", "_hash", "free")

    def _finish(self, key, free):
        self.key = key
        self._hash = hash(key)
        self.free = free

    def __eq__(self, other):
        return self is other or (type(other) is type(self) and self._hash == other._hash
                                 and self.key == other.key)

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"{type(self).__name__}({_atom_str(self)})"


class Sym(Atom):
    __slots__ = ("name", "kind")

    def __init__(self, name: str, kind: str = "state"):
        if kind not in _KIND_RANK:
            raise ValueError(f"unknown symbol kind {kind!r}")
        self.name = name
        self.kind = kind
        self._finish((0, name, _KIND_RANK[kind]), frozenset((name,)))


class Fn(Atom):
    __slots__ = ("tag", "arg")

    def __init__(self, tag: str, arg: "Expr"):
        self.tag = tag
        self.arg = arg
        self._finish((1, tag, arg.key), arg.free)


class AFn(Atom):
    __slots__ = ("name", "args", "orders")

    def __init__(self, name: str, args: tuple, orders: tuple):
        if len(args) != len(orders):
            raise ValueError("derivative multi-index length must match the argument count")
        self.name = name
        self.args = tuple(args)
        self.orders = tuple(int(o) for o in orders)
        free = frozenset().union(*(a.free for a in args)) if args else frozenset()
        self._finish((2, name, self.orders, tuple(a.key for a in args)), free)


class Opaque(Atom):
    """A sum that is raised to a power which cannot be expanded."""
    __slots__ = ("base",)

    def __init__(self, base: "Expr"):
        self.base = base
        self._finish((3, base.key), base.free)


class Integral(Atom):
    """Formal antiderivative ``int(integrand, var)`` from a fixed base point 0."""
    __slots__ = ("integrand", "var")

    def __init__(self, integrand: "Expr", var: Sym):
        self.integrand = integrand
        self.var = var
        self._finish((4, var.name, integrand.key), integrand.free | {var.name})


# ---------------------------------------------------------------- expressions

_ONE = Fraction(1)
_MONO_KEYS: dict = {}


def _mono_key(m):
    k = _MONO_KEYS.get(m)
    if k is None:
        k = tuple((a.key, e) for a, e in m)
        _MONO_KEYS[m] = k
    return k


class Expr:
    """Immutable normalized expression.  Build with the module constructors."""

    __slots__ = ("terms", "_key", "_hash", "_free", "_dcache")

    def __init__(self, terms: dict):
        self.terms = terms
        self._key = None
        self._hash = None
        self._free = None
        self._dcache = None

    # -- structure
    @property
    def key(self):
        if self._key is None:
            self._key = tuple(sorted((_mono_key(m), c) for m, c in self.terms.items()))
        return self._key

    @property
    def free(self) -> frozenset:
        if self._free is None:
            s = set()
            for m in self.terms:
                for a, _ in m:
                    s |= a.free
            self._free = frozenset(s)
        return self._free

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self.key)
        return self._hash

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = const(other)
        if not isinstance(other, Expr):
            return NotImplemented
        return self is other or self.terms == other.terms

    def __ne__(self, other):
        r = self.__eq__(other)
        return r if r is NotImplemented else not r

    def __bool__(self):
        raise TypeError("truth value of an Expr is ambiguous; use is_zero() or .iszero")

    @property
    def iszero(self) -> bool:
        return not self.terms

    @property
    def is_const(self) -> bool:
        return not self.terms or (len(self.terms) == 1 and () in self.terms)

    @property
    def value(self) -> Fraction:
        if not self.is_const:
            raise ValueError(f"{to_str(self)} is not constant")
        return self.terms.get((), Fraction(0))

    def sorted_terms(self):
        items = sorted(self.terms.items(), key=lambda mc: _mono_key(mc[0]))
        # constant term last reads more naturally
        return [t for t in items if t[0]] + [t for t in items if not t[0]]

    def atoms(self) -> set:
        out = set()
        for m in self.terms:
            for a, _ in m:
                out.add(a)
                out |= _inner_atoms(a)
        return out

    # -- arithmetic
    def __add__(self, other):
        return _add(self, _as_expr(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, _scale(_as_expr(other), -1))

    def __rsub__(self, other):
        return _add(_as_expr(other), _scale(self, -1))

    def __neg__(self):
        return _scale(self, -1)

    def __pos__(self):
        return self

    def __mul__(self, other):
        other = _as_expr(other)
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _mul(self, power(_as_expr(other), -1))

    def __rtruediv__(self, other):
        return _mul(_as_expr(other), power(self, -1))

    def __pow__(self, q):
        if isinstance(q, Expr):
            if q.is_const:
                return power(self, q.value)
            return exp(q * log(self))
        return power(self, _q(q))

    # -- calculus & friends
    def diff(self, name, n: int = 1) -> "Expr":
        e = self
        for _ in range(n):
            e = differentiate(e, name)
        return e

    def subs(self, mapping) -> "Expr":
        return substitute(self, mapping)

    def __str__(self):
        return to_str(self)

    def __repr__(self):
        return f"Expr({to_str(self)!r})"

    def tree(self):
        """Nested-tuple view (RationalConst/Var/Param/Sum/Product/Power/...)."""
        return _tree(self)


def _inner_atoms(a) -> set:
    if isinstance(a, Fn):
        return a.arg.atoms()
    if isinstance(a, AFn):
        out = set()
        for x in a.args:
            out |= x.atoms()
        return out
    if isinstance(a, Opaque):
        return a.base.atoms()
    if isinstance(a, Integral):
        return a.integrand.atoms() | {a.var}
    return set()


ZERO = Expr({})
ONE = Expr({(): _ONE})


def const(v) -> Expr:
    q = _q(v)
    return Expr({(): q}) if q else ZERO


def _as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, Atom):
        return _atom_expr(v)
    return const(v)


def _atom_expr(a: Atom) -> Expr:
    return Expr({((a, _ONE),): _ONE})


def sym(name: str, kind: str = "state") -> Expr:
    return _atom_expr(Sym(name, kind))


def _scale(e: Expr, c) -> Expr:
    c = _q(c)
    if not c:
        return ZERO
    if c == 1:
        return e
    return Expr({m: v * c for m, v in e.terms.items()})


def _add(a: Expr, b: Expr) -> Expr:
    if not b.terms:
        return a
    if not a.terms:
        return b
    terms = dict(a.terms)
    for m, c in b.terms.items():
        s = terms.get(m)
        if s is None:
            terms[m] = c
        else:
            s += c
            if s:
                terms[m] = s
            else:
                del terms[m]
    return Expr(terms)


def _accumulate(acc: dict, e: Expr, c: Fraction):
    for m, v in e.terms.items():
        s = acc.get(m, 0) + v * c
        if s:
            acc[m] = s
        else:
            acc.pop(m, None)


_MM_CACHE: dict = {}


def _mono_mul(m1, m2) -> Expr:
    if not m1:
        return Expr({m2: _ONE})
    if not m2:
        return Expr({m1: _ONE})
    ck = (m1, m2)
    r = _MM_CACHE.get(ck)
    if r is None:
        f = dict(m1)
        for a, e in m2:
            f[a] = f.get(a, 0) + e
        r = _canon(f)
        _MM_CACHE[ck] = r
    return r


def _mul(a: Expr, b: Expr) -> Expr:
    if not a.terms or not b.terms:
        return ZERO
    if len(b.terms) == 1 and () in b.terms:
        return _scale(a, b.terms[()])
    if len(a.terms) == 1 and () in a.terms:
        return _scale(b, a.terms[()])
    acc: dict = {}
    for m1, c1 in a.terms.items():
        for m2, c2 in b.terms.items():
            p = _mono_mul(m1, m2)
            if len(p.terms) == 1:
                (m, c), = p.terms.items()
                s = acc.get(m, 0) + c1 * c2 * c
                if s:
                    acc[m] = s
                else:
                    acc.pop(m, None)
            else:
                _accumulate(acc, p, c1 * c2)
    return Expr(acc)


def _is_exp(a):
    return type(a) is Fn and a.tag == "exp"


def _canon(factors: dict) -> Expr:
    """Build the product of ``atom**exp`` factors, applying atom-level rules."""
    plain = []
    exps = []
    deferred = []
    for a, e in factors.items():
        if not e:
            continue
        t = type(a)
        if t is Fn:
            if a.tag == "exp":
                exps.append((a, e))
                continue
            if a.tag == "sqrt" and e.denominator == 1 and abs(e) >= 2:
                deferred.append((a, e))
                continue
        elif t is Opaque and e.denominator == 1 and e > 0:
            deferred.append((a, e))
            continue
        plain.append((a, e))
    if len(exps) == 1 and exps[0][1] == 1:
        plain.append(exps[0])
        exps = []
    plain.sort(key=lambda ae: ae[0].key)
    out = Expr({tuple(plain): _ONE})
    if exps:
        arg = ZERO
        for a, e in exps:
            arg = arg + _scale(a.arg, e)
        out = _mul(out, exp(arg))
    for a, e in deferred:
        if type(a) is Opaque:
            out = _mul(out, power(a.base, e))
        else:
            k = int(e)
            out = _mul(out, power(a.arg, Fraction(k // 2)))
            if k % 2:
                out = _mul(out, _atom_expr(a))
    return out


def _int_root(n: int, d: int):
    if n < 0:
        return None
    if n in (0, 1):
        return n
    r = int(round(n ** (1.0 / d)))
    for c in (r - 1, r, r + 1):
        if c >= 0 and c ** d == n:
            return c
    # big integers: Newton iteration
    x = 1 << ((n.bit_length() + d - 1) // d)
    while True:
        y = ((d - 1) * x + n // x ** (d - 1)) // d
        if y >= x:
            break
        x = y
    return x if x ** d == n else None


def _rational_pow(c: Fraction, q: Fraction):
    """Exact ``c**q`` if rational, else None."""
    if q.denominator == 1:
        return c ** int(q)
    if c <= 0:
        return None
    d = q.denominator
    rn = _int_root(c.numerator, d)
    rd = _int_root(c.denominator, d)
    if rn is None or rd is None:
        return None
    return Fraction(rn, rd) ** q.numerator


def power(e: Expr, q) -> Expr:
    q = _q(q)
    if q == 0:
        return ONE
    if q == 1:
        return e
    if not e.terms:
        if q > 0:
            return ZERO
        raise ZeroDivisionError("zero raised to a negative power")
    if len(e.terms) == 1:
        (m, c), = e.terms.items()
        if q.denominator == 1:
            f = {a: x * q for a, x in m}
            return _scale(_canon(f), c ** int(q))
        if c > 0:
            r = _rational_pow(c, q)
            f = {a: x * q for a, x in m}
            if r is None:
                f[Opaque(const(c))] = q
                r = _ONE
            return _scale(_canon(f), r)
        return _canon({Opaque(e): q})
    if q.denominator == 1 and q > 0:
        result = ONE
        base = e
        k = int(q)
        while k:
            if k & 1:
                result = _mul(result, base)
            k >>= 1
            if k:
                base = _mul(base, base)
        return result
    # content extraction: e = c * g * b with b primitive
    items = e.sorted_terms()
    common = None
    for m, _ in items:
        exps = {a: x for a, x in m if type(a) not in (Opaque,) and not _is_exp(a)
                and not (type(a) is Fn and a.tag == "sqrt")}
        if common is None:
            common = exps
        else:
            common = {a: min(x, exps[a]) for a, x in common.items() if a in exps}
    common = {a: x for a, x in (common or {}).items() if x}
    lead = items[0][1]
    if q.denominator != 1 and lead < 0:
        lead = -lead
    if common or lead != 1:
        terms = {}
        for m, c in e.terms.items():
            f = dict(m)
            for a, x in common.items():
                f[a] = f[a] - x
            nm = tuple(sorted(((a, x) for a, x in f.items() if x), key=lambda ae: ae[0].key))
            terms[nm] = c / lead
        base = Expr(terms)
        outer = _scale(_canon(dict(common)), lead) if common else const(lead)
        return _mul(power(outer, q), _canon({Opaque(base): q}))
    return _canon({Opaque(e): q})


# ---------------------------------------------------------------- elementary functions

def _fn(tag: str, arg: Expr) -> Expr:
    return _atom_expr(Fn(tag, arg))


def _leading_negative(u: Expr) -> bool:
    items = u.sorted_terms()
    return bool(items) and items[0][1] < 0


def exp(u) -> Expr:
    u = _as_expr(u)
    if not u.terms:
        return ONE
    rest = {}
    out = ONE
    for m, c in u.terms.items():
        if len(m) == 1 and m[0][1] == 1 and type(m[0][0]) is Fn and m[0][0].tag == "log":
            out = _mul(out, power(m[0][0].arg, c))
        else:
            rest[m] = c
    if rest:
        out = _mul(out, _fn("exp", Expr(rest)))
    return out


def _log_atom(a: Atom) -> Expr:
    if type(a) is Fn:
        if a.tag == "exp":
            return a.arg
        if a.tag == "sqrt":
            return _scale(log(a.arg), Fraction(1, 2))
    if type(a) is Opaque:
        return log(a.base)
    return _fn("log", _atom_expr(a))


def log(u) -> Expr:
    u = _as_expr(u)
    if u.is_const:
        c = u.value
        if c == 1:
            return ZERO
        return _fn("log", u)
    if len(u.terms) == 1:
        (m, c), = u.terms.items()
        if c > 0:
            out = ZERO if c == 1 else _fn("log", const(c))
            for a, e in m:
                out = out + _scale(_log_atom(a), e)
            return out
    return _fn("log", u)


def _is_square(c: Fraction) -> bool:
    return c >= 0 and _int_root(c.numerator, 2) is not None and _int_root(c.denominator, 2) is not None


def sqrt(u) -> Expr:
    u = _as_expr(u)
    if not u.terms:
        return ZERO
    if len(u.terms) == 1:
        (m, c), = u.terms.items()
        if _is_square(c) and all(e.denominator == 1 and int(e) % 2 == 0 for _, e in m):
            return _scale(_canon({a: e / 2 for a, e in m}), _rational_pow(c, Fraction(1, 2)))
    return _fn("sqrt", u)


def sin(u) -> Expr:
    u = _as_expr(u)
    if not u.terms:
        return ZERO
    if _leading_negative(u):
        return -_fn("sin", -u)
    return _fn("sin", u)


def cos(u) -> Expr:
    u = _as_expr(u)
    if not u.terms:
        return ONE
    if _leading_negative(u):
        u = -u
    return _fn("cos", u)


def tan(u) -> Expr:
    u = _as_expr(u)
    if not u.terms:
        return ZERO
    if _leading_negative(u):
        return -_fn("tan", -u)
    return _fn("tan", u)


_ELEM = {"sin": sin, "cos": cos, "tan": tan, "exp": exp, "log": log, "sqrt": sqrt}


def func(name: str, *args, orders=None) -> Expr:
    args = tuple(_as_expr(a) for a in args)
    if orders is None:
        orders = (0,) * len(args)
    return _atom_expr(AFn(name, args, tuple(orders)))


def integral(integrand, var) -> Expr:
    """``int(integrand, var)``; only the raw formal record, no closed forms."""
    integrand = _as_expr(integrand)
    if isinstance(var, Expr):
        (m, _), = var.terms.items()
        var = m[0][0]
    if not integrand.terms:
        return ZERO
    return _atom_expr(Integral(integrand, var))


# ---------------------------------------------------------------- differentiation

def _atom_diff(a: Atom, v: str) -> Expr:
    t = type(a)
    if t is Sym:
        return ONE if a.name == v else ZERO
    if t is Fn:
        du = differentiate(a.arg, v)
        if not du.terms:
            return ZERO
        u = a.arg
        if a.tag == "sin":
            d = cos(u)
        elif a.tag == "cos":
            d = -sin(u)
        elif a.tag == "tan":
            d = ONE + power(tan(u), 2)
        elif a.tag == "exp":
            d = _atom_expr(a)
        elif a.tag == "log":
            d = power(u, -1)
        else:  # sqrt
            d = _scale(power(_atom_expr(a), -1), Fraction(1, 2))
        return _mul(d, du)
    if t is AFn:
        out = ZERO
        for j, arg in enumerate(a.args):
            dj = differentiate(arg, v)
            if dj.terms:
                o = list(a.orders)
                o[j] += 1
                out = out + _mul(_atom_expr(AFn(a.name, a.args, tuple(o))), dj)
        return out
    if t is Opaque:
        return differentiate(a.base, v)
    if t is Integral:
        if a.var.name == v:
            return a.integrand
        return integral(differentiate(a.integrand, v), a.var)
    raise TypeError(a)


_MD_CACHE: dict = {}


def _mono_diff(m, v: str) -> Expr:
    ck = (m, v)
    r = _MD_CACHE.get(ck)
    if r is not None:
        return r
    acc: dict = {}
    for a, e in m:
        if v not in a.free:
            continue
        da = _atom_diff(a, v)
        if not da.terms:
            continue
        rest = dict(m)
        rest[a] = e - 1
        _accumulate(acc, _mul(_canon(rest), da), e)
    r = Expr(acc)
    _MD_CACHE[ck] = r
    return r


def differentiate(e: Expr, v) -> Expr:
    """Exact partial derivative of ``e`` with respect to the symbol named ``v``."""
    if isinstance(v, Expr):
        (m, _), = v.terms.items()
        v = m[0][0].name
    elif isinstance(v, Sym):
        v = v.name
    if v not in e.free:
        return ZERO
    if e._dcache is None:
        e._dcache = {}
    r = e._dcache.get(v)
    if r is None:
        acc: dict = {}
        for m, c in e.terms.items():
            _accumulate(acc, _mono_diff(m, v), c)
        r = Expr(acc)
        e._dcache[v] = r
    return r


# ---------------------------------------------------------------- substitution

def _normalize_mapping(mapping) -> tuple[dict, dict]:
    names, atoms = {}, {}
    for k, v in mapping.items():
        v = _as_expr(v)
        if isinstance(k, str):
            names[k] = v
        elif isinstance(k, Sym):
            names[k.name] = v
        elif isinstance(k, Atom):
            atoms[k] = v
        elif isinstance(k, Expr):
            (m, c), = k.terms.items()
            if len(m) != 1 or m[0][1] != 1 or c != 1:
                raise ValueError("substitution targets must be single atoms")
            a = m[0][0]
            if isinstance(a, Sym):
                names[a.name] = v
            else:
                atoms[a] = v
        else:
            raise TypeError(k)
    return names, atoms


def _touches(a: Atom, names: dict, atoms: dict) -> bool:
    if a in atoms:
        return True
    if names and not a.free.isdisjoint(names):
        return True
    if atoms:
        return any(_touches(b, names, atoms) for b in _inner_atoms(a))
    return False


def _subs_atom(a: Atom, names, atoms, memo) -> Expr:
    r = memo.get(a)
    if r is not None:
        return r
    if a in atoms:
        r = atoms[a]
    elif not _touches(a, names, atoms):
        r = _atom_expr(a)
    else:
        t = type(a)
        if t is Sym:
            r = names.get(a.name, _atom_expr(a))
        elif t is Fn:
            r = _ELEM[a.tag](_subs(a.arg, names, atoms, memo))
        elif t is AFn:
            r = _atom_expr(AFn(a.name, tuple(_subs(x, names, atoms, memo) for x in a.args), a.orders))
        elif t is Opaque:
            r = _subs(a.base, names, atoms, memo)
        else:
            var = a.var
            if var.name in names:
                nv = names[var.name]
                (m, _), = nv.terms.items()
                var = m[0][0]
            r = integral(_subs(a.integrand, names, atoms, memo), var)
    memo[a] = r
    return r


def _subs(e: Expr, names, atoms, memo) -> Expr:
    acc: dict = {}
    for m, c in e.terms.items():
        if not any(_touches(a, names, atoms) for a, _ in m):
            s = acc.get(m, 0) + c
            if s:
                acc[m] = s
            else:
                acc.pop(m, None)
            continue
        val = ONE
        for a, x in m:
            val = _mul(val, power(_subs_atom(a, names, atoms, memo), x))
        _accumulate(acc, val, c)
    return Expr(acc)


def substitute(e: Expr, mapping) -> Expr:
    """Simultaneous substitution.  Keys are symbol names, symbols or atoms."""
    names, atoms = _normalize_mapping(mapping)
    if not names and not atoms:
        return e
    return _subs(e, names, atoms, {})


def normalize(e) -> Expr:
    """Re-canonicalize from scratch (the constructors already normalize)."""
    e = _as_expr(e)
    return _rebuild(e)


def _rebuild(e: Expr) -> Expr:
    acc: dict = {}
    memo: dict = {}
    for m, c in e.terms.items():
        val = ONE
        for a, x in m:
            r = memo.get(a)
            if r is None:
                t = type(a)
                if t is Sym:
                    r = _atom_expr(a)
                elif t is Fn:
                    r = _ELEM[a.tag](_rebuild(a.arg))
                elif t is AFn:
                    r = _atom_expr(AFn(a.name, tuple(_rebuild(y) for y in a.args), a.orders))
                elif t is Opaque:
                    r = _rebuild(a.base)
                else:
                    r = integral(_rebuild(a.integrand), a.var)
                memo[a] = r
            val = _mul(val, power(r, x))
        _accumulate(acc, val, c)
    return Expr(acc)


# ---------------------------------------------------------------- printing

def _frac_str(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def _atom_str(a: Atom) -> str:
    t = type(a)
    if t is Sym:
        return a.name
    if t is Fn:
        return f"{a.tag}({to_str(a.arg)})"
    if t is AFn:
        mark = ""
        if any(a.orders):
            if len(a.orders) == 1:
                mark = "'" * a.orders[0]
            else:
                mark = "'[" + ",".join(str(o) for o in a.orders) + "]"
        return f"{a.name}{mark}({', '.join(to_str(x) for x in a.args)})"
    if t is Opaque:
        return f"({to_str(a.base)})"
    return f"int({to_str(a.integrand)}, {a.var.name})"


def _factor_str(a: Atom, e: Fraction) -> str:
    s = _atom_str(a)
    if e == 1:
        return s
    if e.denominator == 1 and e > 0:
        return f"{s}^{e.numerator}"
    return f"{s}^({_frac_str(e)})"


def to_str(e: Expr) -> str:
    """Pretty-print in the input grammar; parse(to_str(e)) == e."""
    if not e.terms:
        return "0"
    parts = []
    for i, (m, c) in enumerate(e.sorted_terms()):
        neg = c < 0
        a = -c if neg else c
        factors = [_factor_str(x, y) for x, y in m]
        if not factors:
            body = _frac_str(a)
        elif a == 1:
            body = "*".join(factors)
        else:
            body = _frac_str(a) + "*" + "*".join(factors)
        if i == 0:
            parts.append(("-" if neg else "") + body)
        else:
            parts.append((" - " if neg else " + ") + body)
    return "".join(parts)


def _tree(e: Expr):
    def atom_node(a):
        t = type(a)
        if t is Sym:
            return ("Param", a.name) if a.kind == "param" else ("Var", a.name, a.kind)
        if t is Fn:
            return ("Elementary", a.tag, _tree(a.arg))
        if t is AFn:
            return ("AbstractFunc", a.name, tuple(_tree(x) for x in a.args), a.orders)
        if t is Opaque:
            return _tree(a.base)
        return ("Integral", _tree(a.integrand), a.var.name)

    def mono_node(m, c):
        kids = [] if c == 1 else [("RationalConst", c)]
        for a, x in m:
            kids.append(atom_node(a) if x == 1 else ("Power", atom_node(a), x))
        if not m:
            return ("RationalConst", c)
        if len(kids) == 1:
            return kids[0]
        return ("Product", tuple(kids))

    if not e.terms:
        return ("RationalConst", Fraction(0))
    items = e.sorted_terms()
    if len(items) == 1:
        return mono_node(*items[0])
    return ("Sum", tuple(mono_node(m, c) for m, c in items))


# ---------------------------------------------------------------- context & parsing

@dataclass(frozen=True)
class Context:
    """Declared names.  ``functions`` maps abstract-function names to arity."""

    states: tuple = ()
    time: str | None = "t"
    noises: tuple = ()
    velocities: tuple = ()
    params: tuple = ()
    bindings: Mapping = field(default_factory=dict)
    functions: Mapping = field(default_factory=dict)
    extra: tuple = ()  # (name, kind) pairs, e.g. jet variables

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "noises", tuple(self.noises))
        object.__setattr__(self, "velocities", tuple(self.velocities))
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "extra", tuple(tuple(p) for p in self.extra))
        object.__setattr__(self, "bindings", dict(self.bindings))
        object.__setattr__(self, "functions", dict(self.functions))
        names = self.all_names()
        if len(names) != len(set(names)):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate names in context: {dup}")
        clash = set(self.functions) & (set(names) | set(ELEMENTARY) | {"int"})
        if clash:
            raise ValueError(f"function names clash with symbols: {sorted(clash)}")

    def all_names(self) -> list:
        out = list(self.states) + list(self.noises) + list(self.velocities) + list(self.params)
        if self.time:
            out.append(self.time)
        out += [n for n, _ in self.extra]
        return out

    def kind_of(self, name: str) -> str | None:
        if name in self.states:
            return "state"
        if name == self.time:
            return "time"
        if name in self.noises:
            return "noise"
        if name in self.velocities:
            return "velocity"
        if name in self.params:
            return "param"
        for n, k in self.extra:
            if n == name:
                return k
        return None

    def sym(self, name: str) -> Expr:
        k = self.kind_of(name)
        if k is None:
            raise UndeclaredIdentifier(name)
        return sym(name, k)

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def m(self) -> int:
        return len(self.noises)

    @property
    def t(self) -> Expr:
        return sym(self.time, "time")

    @property
    def x(self) -> list:
        return [sym(s, "state") for s in self.states]

    @property
    def w(self) -> list:
        return [sym(s, "noise") for s in self.noises]

    def with_(self, **changes) -> "Context":
        d = dict(states=self.states, time=self.time, noises=self.noises,
                 velocities=self.velocities, params=self.params, bindings=self.bindings,
                 functions=self.functions, extra=self.extra)
        d.update(changes)
        return Context(**d)

    def parse(self, source: str) -> Expr:
        return parse(source, self)


_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
  | (?P<id>[A-Za-z][A-Za-z0-9_]*)
  | (?P<op>\*\*|[-+*/^(),'\[\]])
""", re.VERBOSE)


def _tokenize(src: str):
    pos, line, col = 0, 1, 1
    out = []
    while pos < len(src):
        mt = _TOKEN.match(src, pos)
        if not mt:
            raise ParseError(f"unexpected character {src[pos]!r}", line, col)
        kind = mt.lastgroup
        text = mt.group()
        if kind != "ws":
            out.append((kind, "^" if text == "**" else text, line, col))
        for ch in text:
            if ch == "\n":
                line += 1
                col = 1
            else:
                col += 1
        pos = mt.end()
    out.append(("end", "", line, col))
    return out


class _Parser:
    def __init__(self, src: str, ctx: Context):
        self.toks = _tokenize(src)
        self.i = 0
        self.ctx = ctx

    def peek(self):
        return self.toks[self.i]

    def take(self, text=None):
        tok = self.toks[self.i]
        if text is not None and tok[1] != text:
            raise ParseError(f"expected {text!r}, found {tok[1] or 'end of input'!r}", tok[2], tok[3])
        self.i += 1
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected token {tok[1]!r}", tok[2], tok[3])
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            r = self.term()
            e = e + r if op == "+" else e - r
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            r = self.unary()
            if op == "*":
                e = e * r
            else:
                if r.iszero:
                    tok = self.toks[self.i - 1]
                    raise ParseError("division by zero", tok[2], tok[3])
                e = e / r
        return e

    def unary(self) -> Expr:
        if self.peek()[1] == "-":
            self.take()
            return -self.unary()
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "^":
            tok = self.take()
            ex = self.unary()
            if ex.is_const:
                if base.iszero and ex.value < 0:
                    raise ParseError("zero raised to a negative power", tok[2], tok[3])
                return power(base, ex.value)
            return exp(ex * log(base))
        return base

    def atom(self) -> Expr:
        tok = self.take()
        kind, text, line, col = tok
        if kind == "num":
            return const(Fraction(text))
        if text == "(":
            e = self.expr()
            self.take(")")
            return e
        if kind == "id":
            if text in ELEMENTARY:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return _ELEM[text](arg)
            if text == "int":
                self.take("(")
                integrand = self.expr()
                self.take(",")
                vt = self.take()
                if vt[0] != "id":
                    raise ParseError("expected integration variable", vt[2], vt[3])
                var = self.ctx.sym(vt[1]) if self.ctx.kind_of(vt[1]) else None
                if var is None:
                    raise UndeclaredIdentifier(vt[1], vt[2], vt[3])
                self.take(")")
                return integral(integrand, var)
            if text in self.ctx.functions:
                arity = self.ctx.functions[text]
                orders = None
                if self.peek()[1] == "'":
                    primes = 0
                    while self.peek()[1] == "'":
                        self.take()
                        primes += 1
                    if self.peek()[1] == "[":
                        if primes != 1:
                            raise ParseError("use either primes or a bracketed multi-index", line, col)
                        self.take("[")
                        orders = [self._int()]
                        while self.peek()[1] == ",":
                            self.take()
                            orders.append(self._int())
                        self.take("]")
                    else:
                        if arity != 1:
                            raise ParseError(f"{text} takes {arity} arguments; use {text}'[...]", line, col)
                        orders = [primes]
                self.take("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.take(")")
                if len(args) != arity:
                    raise ParseError(f"{text} expects {arity} arguments, got {len(args)}", line, col)
                if orders is not None and len(orders) != arity:
                    raise ParseError("derivative multi-index length must match arity", line, col)
                return func(text, *args, orders=orders)
            k = self.ctx.kind_of(text)
            if k is None:
                raise UndeclaredIdentifier(text, line, col)
            return sym(text, k)
        raise ParseError(f"unexpected token {text or 'end of input'!r}", line, col)

    def _int(self) -> int:
        tok = self.take()
        if tok[0] != "num" or not tok[1].isdigit():
            raise ParseError("expected a nonnegative integer", tok[2], tok[3])
        return int(tok[1])


def parse(source: str, ctx: Context) -> Expr:
    """Parse ``source`` under ``ctx`` into a normalized expression."""
    return _Parser(source, ctx).parse()


# ---------------------------------------------------------------- numeric evaluation

class StandIns:
    """Random polynomial stand-ins for abstract functions.

    Each name gets a polynomial of the given total degree with small rational
    coefficients drawn from a generator keyed by (seed, name, arity, degree).
    Derivatives are evaluated exactly against the same polynomial.
    """

    def __init__(self, seed: int = 42, degrees: Mapping | None = None, default_degree: int = 3):
        self.seed = seed
        self.degrees = dict(degrees or {})
        self.default_degree = default_degree
        self._coeffs: dict = {}

    def degree(self, name: str) -> int:
        return self.degrees.get(name, self.default_degree)

    def coefficients(self, name: str, arity: int):
        deg = self.degree(name)
        ck = (name, arity, deg)
        c = self._coeffs.get(ck)
        if c is None:
            rng = np.random.default_rng([self.seed, zlib.crc32(name.encode()), arity, deg])
            c = []
            for alpha in _iproduct(range(deg + 1), repeat=arity):
                if sum(alpha) <= deg:
                    num = int(rng.integers(-9, 10))
                    den = int(rng.integers(1, 8))
                    if num:
                        c.append((alpha, Fraction(num, den)))
            if not c:
                c.append(((0,) * arity, _ONE))
            self._coeffs[ck] = c
        return c

    def eval(self, name: str, orders, args, exact: bool):
        total = 0
        for alpha, coef in self.coefficients(name, len(args)):
            if any(a < o for a, o in zip(alpha, orders)):
                continue
            term = coef
            for a, o, z in zip(alpha, orders, args):
                k = a - o
                if o:
                    term = term * (math.factorial(a) // math.factorial(k))
                if k:
                    term = term * z ** k
            total = total + (term if exact else float(term) if not isinstance(term, np.ndarray) else term)
        if not exact and not isinstance(total, np.ndarray):
            total = float(total)
        return total


_NP_FN = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log, "sqrt": np.sqrt}


class _Evaluator:
    def __init__(self, env: Mapping, exact: bool, standins: StandIns | None):
        self.env = env
        self.exact = exact
        self.standins = standins
        self.memo: dict = {}

    def atom(self, a: Atom):
        r = self.memo.get(a)
        if r is not None:
            return r
        t = type(a)
        if t is Sym:
            if a.name not in self.env:
                raise UnboundSymbol(a.name)
            r = self.env[a.name]
            if self.exact:
                r = _q(r)
        elif t is Fn:
            if self.exact:
                raise NotRationalClosed(f"{a.tag} is not rational-closed")
            r = _NP_FN[a.tag](self.expr(a.arg))
        elif t is AFn:
            if self.standins is None:
                raise UnboundSymbol(a.name)
            r = self.standins.eval(a.name, a.orders, [self.expr(x) for x in a.args], self.exact)
        elif t is Opaque:
            r = self.expr(a.base)
        else:
            if self.exact:
                raise NotRationalClosed("formal integrals are not rational-closed")
            r = self._integral(a)
        self.memo[a] = r
        return r

    def _integral(self, a: Integral):
        from scipy.integrate import quad

        upper = np.asarray(self.env[a.var.name], dtype=float)
        flat = np.atleast_1d(upper)
        out = np.empty(flat.shape)
        for i, u in enumerate(flat):
            env = {k: (np.atleast_1d(v)[i] if np.ndim(v) else v) for k, v in self.env.items()}

            def f(s, env=env):
                env[a.var.name] = s
                return float(evaluate(a.integrand, env, standins=self.standins))

            out[i] = quad(f, 0.0, float(u), limit=200)[0]
        return out if np.ndim(upper) else float(out[0])

    def mono(self, m):
        val = None
        for a, e in m:
            v = self.atom(a)
            if e.denominator == 1:
                p = v ** int(e) if not (not self.exact and int(e) < 0 and np.ndim(v) == 0 and v == 0) else math.inf
            elif self.exact:
                p = _rational_pow(v, e)
                if p is None:
                    raise NotRationalClosed("irrational power")
            else:
                p = np.power(np.asarray(v, dtype=float), float(e))
            val = p if val is None else val * p
        return 1 if val is None else val

    def expr(self, e: Expr):
        total = 0
        for m, c in e.terms.items():
            v = self.mono(m)
            total = total + (c * v if self.exact else float(c) * v)
        if not self.exact and not isinstance(total, np.ndarray):
            total = float(total)
        return total

    def terms(self, e: Expr):
        return [(float(c) * self.mono(m)) for m, c in e.terms.items()]


def evaluate(e: Expr, point: Mapping, mode: str = "float", standins: StandIns | None = None):
    """Numeric value of ``e``.  Float mode returns nan/inf instead of raising on
    domain violations; exact mode returns a Fraction."""
    exact = mode in ("exact", "exact-rational", "rational")
    ev = _Evaluator(point, exact, standins)
    if exact:
        return ev.expr(e)
    with np.errstate(all="ignore"):
        try:
            return ev.expr(e)
        except ZeroDivisionError:
            return math.inf


def lambdify(exprs: list, names: list, standins: StandIns | None = None) -> Callable:
    """Vectorized float evaluator for a list of expressions: f(*arrays) -> list."""
    exprs = list(exprs)

    def f(*values):
        env = dict(zip(names, values))
        ev = _Evaluator(env, False, standins)
        with np.errstate(all="ignore"):
            return [ev.expr(e) for e in exprs]

    return f


# ---------------------------------------------------------------- zero testing

@dataclass(frozen=True)
class ZeroPolicy:
    samples: int = 32
    seed: int = 42
    tol: float = 1e-9
    domains: Mapping = field(default_factory=dict)
    default_domain: tuple = (0.5, 2.0)
    max_resamples: int = 100
    bindings: Mapping = field(default_factory=dict)

    def domain(self, name: str) -> tuple:
        return tuple(self.domains.get(name, self.default_domain))

    def replace(self, **kw) -> "ZeroPolicy":
        d = dict(samples=self.samples, seed=self.seed, tol=self.tol, domains=self.domains,
                 default_domain=self.default_domain, max_resamples=self.max_resamples,
                 bindings=self.bindings)
        d.update(kw)
        return ZeroPolicy(**d)


DEFAULT_POLICY = ZeroPolicy()


@dataclass
class Verdict:
    status: str  # "proven" | "numeric" | "nonzero"
    max_abs: float = 0.0
    witness: dict | None = None
    value: float | None = None

    def __bool__(self):
        return self.status != "nonzero"

    @property
    def proven(self) -> bool:
        return self.status == "proven"


def _afn_degrees(exprs) -> dict:
    deg: dict = {}
    for e in exprs:
        for a in e.atoms():
            if type(a) is AFn:
                deg[a.name] = max(deg.get(a.name, 3), sum(a.orders) + 2)
    return deg


def _free_syms(exprs) -> list:
    names = set()
    for e in exprs:
        for a in e.atoms():
            if type(a) is Sym:
                names.add(a.name)
            elif type(a) is Integral:
                names.add(a.var.name)
    return sorted(names)


def sample_point(names, policy: ZeroPolicy, k: int, attempt: int = 0) -> dict:
    key = [policy.seed, k] if attempt == 0 else [policy.seed, k, attempt]
    rng = np.random.default_rng(key)
    pt = {}
    for nm in names:
        lo, hi = policy.domain(nm)
        u = rng.uniform(lo, hi)
        if nm in policy.bindings:
            pt[nm] = float(policy.bindings[nm])
        else:
            pt[nm] = u
    return pt


def sample_points(names, policy: ZeroPolicy, count: int | None = None) -> dict:
    count = policy.samples if count is None else count
    cols = {nm: np.empty(count) for nm in names}
    for k in range(count):
        pt = sample_point(names, policy, k)
        for nm in names:
            cols[nm][k] = pt[nm]
    return cols


def policy_for(ctx: Context | None, policy: ZeroPolicy | None = None) -> ZeroPolicy:
    """Policy with the context's numeric parameter bindings folded in."""
    policy = policy or DEFAULT_POLICY
    if ctx is None or not ctx.bindings:
        return policy
    return policy.replace(bindings={**ctx.bindings, **policy.bindings})


def is_zero(e: Expr, policy: ZeroPolicy | None = None, standins: StandIns | None = None) -> Verdict:
    """Two-tier zero test: structural zero first, then seeded sampling."""
    return is_zero_many([e], policy, standins)[0]


def is_zero_many(exprs, policy: ZeroPolicy | None = None, standins: StandIns | None = None) -> list:
    policy = policy or DEFAULT_POLICY
    exprs = [_as_expr(e) for e in exprs]
    out: list = [None] * len(exprs)
    pending = [i for i, e in enumerate(exprs) if e.terms]
    for i, e in enumerate(exprs):
        if not e.terms:
            out[i] = Verdict("proven")
    if not pending:
        return out
    todo = [exprs[i] for i in pending]
    if standins is None:
        standins = StandIns(policy.seed, _afn_degrees(todo))
    names = _free_syms(todo)
    cols = sample_points(names, policy)
    for i, e in zip(pending, todo):
        out[i] = _check(e, names, cols, policy, standins)
    return out


def _check(e: Expr, names, cols, policy: ZeroPolicy, standins: StandIns) -> Verdict:
    ev = _Evaluator(cols, False, standins)
    with np.errstate(all="ignore"):
        terms = [np.broadcast_to(np.asarray(t, dtype=float), (policy.samples,)) for t in ev.terms(e)]
    vals = np.sum(terms, axis=0)
    guard = np.max(np.abs(terms), axis=0)
    bad = ~np.isfinite(vals) | ~np.isfinite(guard)
    vals = vals.copy()
    guard = guard.copy()
    points = None
    if bad.any():
        points = {nm: cols[nm].copy() for nm in names}
        for k in np.nonzero(bad)[0]:
            for attempt in range(1, policy.max_resamples + 1):
                pt = sample_point(names, policy, int(k), attempt)
                ev1 = _Evaluator(pt, False, standins)
                with np.errstate(all="ignore"):
                    try:
                        ts = [float(t) for t in ev1.terms(e)]
                    except ZeroDivisionError:
                        continue
                v = float(np.sum(ts))
                g = float(np.max(np.abs(ts)))
                if math.isfinite(v) and math.isfinite(g):
                    vals[k], guard[k] = v, g
                    for nm in names:
                        points[nm][k] = pt[nm]
                    break
            else:
                raise AllSamplesSingular(
                    f"no finite evaluation of {to_str(e)[:80]} after {policy.max_resamples} resamples")
    pts = points or cols
    absv = np.abs(vals)
    ok = absv <= policy.tol * (1.0 + guard)
    max_abs = float(np.max(absv))
    if ok.all():
        return Verdict("numeric", max_abs)
    k = int(np.nonzero(~ok)[0][0])
    return Verdict("nonzero", max_abs, {nm: float(pts[nm][k]) for nm in names}, float(vals[k]))


# ---------------------------------------------------------------- residual systems

@dataclass
class ResidualSystem:
    """Labelled residual expressions whose joint vanishing is a symmetry condition."""

    residuals: list
    ctx: Context | None = None
    onshell: dict = field(default_factory=dict)
    forms: dict = field(default_factory=dict)  # equivalent formulations, e.g. commutators

    def __post_init__(self):
        self.residuals = [(lab, _as_expr(e)) for lab, e in self.residuals]
        labels = [lab for lab, _ in self.residuals]
        if len(labels) != len(set(labels)):
            raise ValueError("residual labels must be unique")

    def __iter__(self):
        return iter(self.residuals)

    def __len__(self):
        return len(self.residuals)

    def __getitem__(self, label):
        for lab, e in self.residuals:
            if lab == label:
                return e
        raise KeyError(label)

    @property
    def labels(self) -> list:
        return [lab for lab, _ in self.residuals]

    @property
    def exprs(self) -> list:
        return [e for _, e in self.residuals]

    def subset(self, prefix) -> "ResidualSystem":
        return ResidualSystem([(lab, e) for lab, e in self.residuals if lab[0] == prefix],
                              self.ctx, dict(self.onshell))

    def map(self, fn) -> "ResidualSystem":
        return ResidualSystem([(lab, fn(e)) for lab, e in self.residuals], self.ctx, dict(self.onshell))

    def verdicts(self, policy: ZeroPolicy | None = None, standins: StandIns | None = None) -> list:
        return list(zip(self.labels, is_zero_many(self.exprs, policy_for(self.ctx, policy), standins)))

    def all_zero(self, policy: ZeroPolicy | None = None, standins: StandIns | None = None) -> bool:
        return all(v for _, v in self.verdicts(policy, standins))

    @property
    def proven_zero(self) -> bool:
        return all(e.iszero for e in self.exprs)
