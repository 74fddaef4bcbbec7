"""Monte Carlo integration of Ito and Stratonovich equations."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .expr import Expr, StandIns, _afn_degrees, lambdify
from .fields import as_expr
from .ito import ItoSDE, _SDE
from .strato import StratSDE

__all__ = [
    "SimConfig", "PathEnsemble", "simulate", "conserved_drift", "moments", "moment_agreement",
    "write_csv", "thread_count",
]

SCHEMES = ("euler-maruyama", "stratonovich-heun")


@dataclass(frozen=True)
class SimConfig:
    dt: float
    T: float
    paths: int
    x0: tuple
    seed: int = 42
    scheme: str = "euler-maruyama"
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.dt > self.T:
            raise ValueError("dt must not exceed T")
        if self.paths < 1:
            raise ValueError("at least one path is required")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class PathEnsemble:
    names: tuple
    times: np.ndarray            # (steps + 1,)
    states: np.ndarray           # (paths, steps + 1, n)
    increments: np.ndarray       # (paths, steps, m)
    blowups: list = field(default_factory=list)   # (path, step) of the first non-finite state
    config: SimConfig | None = None

    @property
    def final(self) -> np.ndarray:
        return self.states[:, -1, :]

    @property
    def ok(self) -> np.ndarray:
        bad = {p for p, _ in self.blowups}
        return np.array([p not in bad for p in range(self.states.shape[0])])

    def summary(self) -> dict:
        m = moments(self)
        return {
            "paths": int(self.states.shape[0]), "steps": int(self.states.shape[1] - 1),
            "blowups": [list(b) for b in self.blowups],
            "mean": [float(v) for v in m["mean"]], "var": [float(v) for v in m["var"]],
            "mean_se": [float(v) for v in m["mean_se"]],
        }


def thread_count() -> int:
    v = os.environ.get("STOSYM_THREADS")
    if v:
        return max(1, int(v))
    return os.cpu_count() or 1


def _noise(seed: int, path: int, steps: int, m: int, dt: float) -> np.ndarray:
    # one counter-based stream per (seed, path); step and component index the draws
    rng = np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, path]))
    return rng.standard_normal((steps, m)) * math.sqrt(dt)


def _coefficients(sde: _SDE):
    ctx = sde.ctx
    exprs = list(sde._drift) + [v for r in sde.sigma for v in r]
    standins = StandIns(42, _afn_degrees(exprs))
    names = list(ctx.states) + [ctx.time] + list(ctx.params)
    fn = lambdify(exprs, names, standins)
    missing = set(ctx.params) - set(ctx.bindings)
    used = set().union(*(e.free for e in exprs)) if exprs else set()
    if missing & used:
        raise ValueError(f"unbound parameters: {sorted(missing & used)}")
    pvals = [float(ctx.bindings.get(p, math.nan)) for p in ctx.params]
    n, m = sde.n, sde.m

    def coeffs(x: np.ndarray, t: float):
        vals = fn(*[x[:, i] for i in range(n)], t, *pvals)
        k = x.shape[0]
        out = [np.broadcast_to(np.asarray(v, dtype=float), (k,)) for v in vals]
        drift = np.stack(out[:n], axis=1)
        sig = np.stack(out[n:], axis=1).reshape(k, n, m)
        return drift, sig

    return coeffs


def _run_chunk(coeffs, scheme, x0, t0, dt, steps, dW):
    k, n = dW.shape[0], len(x0)
    X = np.empty((k, steps + 1, n))
    X[:, 0, :] = x0
    x = X[:, 0, :].copy()
    alive = np.ones(k, dtype=bool)
    first_bad = np.full(k, -1)
    with np.errstate(all="ignore"):
        for s in range(steps):
            t = t0 + s * dt
            dw = dW[:, s, :]
            a, S = coeffs(x, t)
            if scheme == "euler-maruyama":
                xn = x + a * dt + np.einsum("pij,pj->pi", S, dw)
            else:
                xp = x + a * dt + np.einsum("pij,pj->pi", S, dw)
                a2, S2 = coeffs(xp, t + dt)
                xn = x + 0.5 * (a + a2) * dt + 0.5 * np.einsum("pij,pj->pi", S + S2, dw)
            bad = alive & ~np.all(np.isfinite(xn), axis=1)
            first_bad[bad] = s + 1
            alive &= ~bad
            xn[~alive] = np.nan
            X[:, s + 1, :] = xn
            x = xn
    return X, first_bad


def simulate(sde: _SDE, cfg: SimConfig, threads: int | None = None) -> PathEnsemble:
    """Integrate an ensemble of paths; blow-ups are reported, not raised."""
    if cfg.scheme == "euler-maruyama" and not isinstance(sde, ItoSDE):
        raise TypeError("euler-maruyama integrates Ito equations")
    if cfg.scheme == "stratonovich-heun" and not isinstance(sde, StratSDE):
        raise TypeError("stratonovich-heun integrates Stratonovich equations")
    if len(cfg.x0) != sde.n:
        raise ValueError(f"initial state needs {sde.n} components")
    steps, m = cfg.steps, sde.m
    dW = np.stack([_noise(cfg.seed, p, steps, m, cfg.dt) for p in range(cfg.paths)])
    coeffs = _coefficients(sde)
    x0 = np.asarray(cfg.x0)
    threads = thread_count() if threads is None else max(1, threads)
    bounds = np.linspace(0, cfg.paths, min(threads, cfg.paths) + 1).astype(int)
    chunks = [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]

    def job(lo_hi):
        lo, hi = lo_hi
        return _run_chunk(coeffs, cfg.scheme, x0, cfg.t0, cfg.dt, steps, dW[lo:hi])

    if len(chunks) == 1:
        results = [job(chunks[0])]
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            results = list(pool.map(job, chunks))
    X = np.concatenate([r[0] for r in results])
    first_bad = np.concatenate([r[1] for r in results])
    blowups = [(int(p), int(s)) for p, s in enumerate(first_bad) if s >= 0]
    times = cfg.t0 + cfg.dt * np.arange(steps + 1)
    return PathEnsemble(sde.ctx.states, times, X, dW, blowups, cfg)


def moments(ens: PathEnsemble) -> dict:
    """Mean, variance and second moment of the final state, with standard errors."""
    x = ens.final[ens.ok]
    if x.shape[0] == 0:
        nan = np.full(ens.final.shape[1], np.nan)
        return {"mean": nan, "var": nan, "mean_se": nan, "m2": nan, "m2_se": nan, "count": 0}
    k = x.shape[0]
    mean = x.mean(axis=0)
    var = x.var(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(x.shape[1])
    sq = x * x
    m2 = sq.mean(axis=0)
    m2_var = sq.var(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(x.shape[1])
    return {"mean": mean, "var": var, "mean_se": np.sqrt(var / k),
            "m2": m2, "m2_se": np.sqrt(m2_var / k), "count": k}


def moment_agreement(a: PathEnsemble, b: PathEnsemble, k: float = 5.0) -> dict:
    """First and second moments of x(T) agree within k combined standard errors."""
    ma, mb = moments(a), moments(b)
    out = {}
    for key, se in (("mean", "mean_se"), ("m2", "m2_se")):
        diff = np.abs(ma[key] - mb[key])
        tol = k * np.sqrt(ma[se] ** 2 + mb[se] ** 2)
        out[key] = {"diff": diff.tolist(), "tol": tol.tolist(), "ok": bool(np.all(diff <= tol))}
    out["ok"] = out["mean"]["ok"] and out["m2"]["ok"]
    return out


def conserved_drift(ens: PathEnsemble, J, ctx=None) -> dict:
    """max over paths of |J(x(T)) - J(x(0))| / max(1, |J(x(0))|)."""
    if not isinstance(J, Expr):
        if ctx is None:
            raise ValueError("a context is needed to parse J")
        J = as_expr(J, ctx)
    names = list(ens.names) + ["t"]
    params = {}
    if ctx is not None:
        names = list(ens.names) + [ctx.time] + list(ctx.params)
        params = {p: float(v) for p, v in ctx.bindings.items()}
    fn = lambdify([J], names, StandIns(42, _afn_degrees([J])))

    def val(x, t):
        extra = [params.get(p, math.nan) for p in names[len(ens.names) + 1:]]
        v = fn(*[x[:, i] for i in range(x.shape[1])], t, *extra)[0]
        return np.broadcast_to(np.asarray(v, dtype=float), (x.shape[0],))

    j0 = val(ens.states[:, 0, :], float(ens.times[0]))
    j1 = val(ens.states[:, -1, :], float(ens.times[-1]))
    per = np.abs(j1 - j0) / np.maximum(1.0, np.abs(j0))
    per = np.where(ens.ok, per, np.nan)
    finite = per[np.isfinite(per)]
    return {"max_relative_drift": float(finite.max()) if finite.size else math.nan,
            "per_path": per.tolist()}


def write_csv(ens: PathEnsemble, path, every: int = 1):
    """Trajectory dump: path,step,t,<states> with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "step", "t", *ens.names])
        for p in range(ens.states.shape[0]):
            for s in range(0, ens.states.shape[1], every):
                w.writerow([p, s, f"{ens.times[s]:.17g}", *(f"{v:.17g}" for v in ens.states[p, s])])
