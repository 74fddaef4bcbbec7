"""Command line front end: TOML task specs in, deterministic JSON reports out.

    stosym <action> <specfile> [--seed N] [--samples N] [--tol X] [--json PATH] [--csv PATH]

Exit codes: 0 positive verdict, 1 negative verdict, 2 spec error, 3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from . import __version__
from .expr import Context, ParseError, ZeroPolicy, is_zero_many, policy_for, to_str
from .fields import DynSystem, VectorField, lie_bracket
from .ito import ItoSDE, fp_determining
from .reduce import kozlov_condition, kozlov_mu, linearize, quadrature_form, reduce_by_spatial_symmetry
from .sim import SimConfig, conserved_drift, moment_agreement, simulate, write_csv
from .solve import Ansatz, resolve_builder, solve_symmetries
from .strato import StratSDE, ito_to_strat, strat_to_ito, strongly_conserved

__all__ = ["ACTIONS", "SpecError", "TaskSpec", "load_spec", "parse_spec", "dump_spec", "run_task",
           "emit_report", "main"]

ACTIONS = ("verify", "solve", "convert", "linearize", "reduce", "conserved", "bracket", "simulate")
_BLOCKS = ("model", "fields", "ansatz", "charges", "coords", "task", "policy", "simulation")


class SpecError(ValueError):
    def __init__(self, message: str, block: str = ""):
        super().__init__(f"[{block}] {message}" if block else message)
        self.block = block


# ---------------------------------------------------------------- spec model

@dataclass
class TaskSpec:
    raw: dict
    digest: str
    ctx: Context
    system: object
    fields: dict = field(default_factory=dict)
    ansatz: Ansatz | None = None
    charges: dict = field(default_factory=dict)
    policy: ZeroPolicy = field(default_factory=ZeroPolicy)

    @property
    def task(self) -> dict:
        return self.raw.get("task", {})


def load_spec(path) -> TaskSpec:
    data = Path(path).read_bytes()
    return parse_spec(data.decode("utf-8"), hashlib.sha256(data).hexdigest())


def parse_spec(text: str, digest: str | None = None) -> TaskSpec:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"syntax error: {exc}") from exc
    if digest is None:
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return _build(raw, digest)


def dump_spec(spec: TaskSpec | dict) -> str:
    raw = spec.raw if isinstance(spec, TaskSpec) else spec
    return tomli_w.dumps(raw)


def _names(v, block: str, key: str) -> tuple:
    if v is None:
        return ()
    if not isinstance(v, list) or not all(isinstance(s, str) for s in v):
        raise SpecError(f"{key} must be a list of names", block)
    return tuple(v)


def _parse(ctx: Context, src, block: str):
    if isinstance(src, bool):
        raise SpecError(f"expected an expression, got {src!r}", block)
    if isinstance(src, (int, float)):
        src = str(Fraction(str(src)))
    if not isinstance(src, str):
        raise SpecError(f"expected an expression string, got {src!r}", block)
    try:
        return ctx.parse(src)
    except ParseError as exc:
        raise SpecError(f"{exc} in {src!r}", block) from exc


def _per_name(v, names, block: str, key: str, default=None):
    """Table keyed by names, or a list in declaration order."""
    if v is None:
        if default is None:
            raise SpecError(f"missing {key}", block)
        return [default] * len(names)
    if isinstance(v, dict):
        extra = set(v) - set(names)
        if extra:
            raise SpecError(f"{key} refers to undeclared names {sorted(extra)}", block)
        if default is None and set(v) != set(names):
            raise SpecError(f"{key} needs an entry for each of {list(names)}", block)
        return [v.get(n, default) for n in names]
    if isinstance(v, list):
        if len(v) != len(names):
            raise SpecError(f"{key} needs {len(names)} entries", block)
        return v
    raise SpecError(f"{key} must be a table or a list", block)


def _build(raw: dict, digest: str) -> TaskSpec:
    unknown = set(raw) - set(_BLOCKS)
    if unknown:
        raise SpecError(f"unknown blocks {sorted(unknown)}")
    model = raw.get("model")
    if not isinstance(model, dict):
        raise SpecError("a [model] block is required", "model")
    kind = model.get("kind", "ito")
    if kind not in ("ito", "strat", "dyn"):
        raise SpecError(f"unknown model kind {kind!r}", "model")
    states = _names(model.get("states"), "model", "states")
    if not states:
        raise SpecError("at least one state variable is required", "model")
    noises = _names(model.get("noises", ["w"] if kind != "dyn" else []), "model", "noises")
    bindings = model.get("bindings", {})
    if not isinstance(bindings, dict):
        raise SpecError("bindings must be a table", "model")
    functions = model.get("functions", {})
    try:
        ctx = Context(states=states, time=model.get("time", "t"), noises=noises,
                      params=_names(model.get("params"), "model", "params"),
                      bindings={k: Fraction(str(v)) if not isinstance(v, str) else Fraction(v)
                                for k, v in bindings.items()},
                      functions=functions)
    except ValueError as exc:
        raise SpecError(str(exc), "model") from exc
    for k in bindings:
        if k not in ctx.params:
            raise SpecError(f"binding for undeclared parameter {k!r}", "model")
    drift = [_parse(ctx, s, "model") for s in _per_name(model.get("drift"), states, "model", "drift")]
    try:
        if kind == "dyn":
            system = DynSystem(ctx, tuple(drift))
        else:
            rows = _per_name(model.get("diffusion"), states, "model", "diffusion")
            sig = []
            for r in rows:
                r = r if isinstance(r, list) else [r]
                if len(r) != len(noises):
                    raise SpecError(f"each diffusion row needs {len(noises)} entries", "model")
                sig.append([_parse(ctx, s, "model") for s in r])
            system = (ItoSDE if kind == "ito" else StratSDE)(ctx, drift, sig)
    except SpecError:
        raise
    except ValueError as exc:
        raise SpecError(str(exc), "model") from exc
    spec = TaskSpec(raw, digest, ctx, system)
    for name, blk in raw.get("fields", {}).items():
        spec.fields[name] = _field(ctx, blk, f"fields.{name}")
    if "ansatz" in raw:
        spec.ansatz = _ansatz(ctx, raw["ansatz"])
    for name, src in raw.get("charges", {}).items():
        spec.charges[name] = _parse(ctx, src, f"charges.{name}")
    spec.policy = _policy(raw.get("policy", {}), ctx)
    _check_refs(spec)
    return spec


def _matrix(B, m: int, block: str):
    if not isinstance(B, list) or len(B) != m or any(not isinstance(r, list) or len(r) != m for r in B):
        raise SpecError(f"B must be a {m}x{m} matrix", block)
    return [[Fraction(str(v)) for v in r] for r in B]


def _field(ctx: Context, blk: dict, block: str) -> VectorField:
    if not isinstance(blk, dict):
        raise SpecError("field blocks are tables", block)
    tau = _parse(ctx, blk.get("tau", "0"), block)
    xi = [_parse(ctx, s, block) for s in _per_name(blk.get("xi"), ctx.states, block, "xi", "0")]
    B = _matrix(blk["B"], ctx.m, block) if "B" in blk else None
    h = None
    if "h" in blk:
        h = [_parse(ctx, s, block) for s in _per_name(blk["h"], ctx.noises, block, "h", "0")]
    try:
        return VectorField(ctx, tau, xi, h, B)
    except ValueError as exc:
        raise SpecError(str(exc), block) from exc


def _ansatz(ctx: Context, blk: dict) -> Ansatz:
    block = "ansatz"
    tau = [_parse(ctx, s, block) for s in blk.get("tau", [])]
    xi = [[_parse(ctx, s, block) for s in lst]
          for lst in _per_name(blk.get("xi"), ctx.states, block, "xi", [])]
    h = [[_parse(ctx, s, block) for s in lst]
         for lst in _per_name(blk.get("h"), ctx.noises, block, "h", [])] if "h" in blk else None
    B = [tuple(p) for p in blk.get("B", [])]
    try:
        return Ansatz(ctx, tau, xi, h, B)
    except ValueError as exc:
        raise SpecError(str(exc), block) from exc


def _policy(blk: dict, ctx: Context) -> ZeroPolicy:
    allowed = {"seed", "samples", "tol", "domains"}
    if set(blk) - allowed:
        raise SpecError(f"unknown keys {sorted(set(blk) - allowed)}", "policy")
    domains = {}
    for k, v in blk.get("domains", {}).items():
        if k not in ctx.all_names():
            raise SpecError(f"domain for undeclared variable {k!r}", "policy")
        if not (isinstance(v, list) and len(v) == 2 and v[0] < v[1]):
            raise SpecError(f"domain for {k!r} must be [lo, hi] with lo < hi", "policy")
        domains[k] = (float(v[0]), float(v[1]))
    pol = ZeroPolicy(samples=int(blk.get("samples", 32)), seed=int(blk.get("seed", 42)),
                     tol=float(blk.get("tol", 1e-9)), domains=domains)
    if pol.samples < 1 or not pol.tol > 0:
        raise SpecError("samples must be positive and tol > 0", "policy")
    return pol


def _check_refs(spec: TaskSpec):
    task = spec.task
    if "action" in task and task["action"] not in ACTIONS:
        raise SpecError(f"unknown action {task['action']!r}", "task")
    for key in ("fields", "pair"):
        for name in task.get(key, []):
            if name not in spec.fields:
                raise SpecError(f"unknown field {name!r}", "task")
    for key in ("field", "expect"):
        if key in task and task[key] not in spec.fields:
            raise SpecError(f"unknown field {task[key]!r}", "task")
    if "charge" in task and task["charge"] not in spec.charges:
        raise SpecError(f"unknown charge {task['charge']!r}", "task")
    coords = spec.raw.get("coords")
    if coords and "symmetry" in coords and coords["symmetry"] not in spec.fields:
        raise SpecError(f"unknown field {coords['symmetry']!r}", "coords")


# ---------------------------------------------------------------- reports

def _num(v):
    if v is None:
        return None
    v = float(v)
    if not math.isfinite(v):
        return str(v)
    return float(f"{v:.12g}")


def _label(lab) -> str:
    return ",".join(str(p) for p in lab)


def _residual_entries(name: str, rs, policy) -> list:
    out = []
    for lab, v in rs.verdicts(policy):
        out.append({
            "field": name, "label": _label(lab), "status": v.status, "max_abs": _num(v.max_abs),
            "witness": None if v.witness is None else {k: _num(x) for k, x in sorted(v.witness.items())},
            "value": _num(v.value),
        })
    return out


def _sde_dict(sde) -> dict:
    key = "f" if isinstance(sde, ItoSDE) else "b"
    return {"kind": sde.kind, "states": list(sde.ctx.states), key: [to_str(v) for v in sde._drift],
            "sigma": [[to_str(v) for v in r] for r in sde.sigma]}


def _new_report(spec: TaskSpec, action: str, policy: ZeroPolicy) -> dict:
    return {
        "version": __version__, "spec_digest": spec.digest, "action": action, "verdict": None,
        "residuals": [], "basis": None, "outputs": {}, "simulation": None,
        "policy": {"seed": policy.seed, "samples": policy.samples, "tol": policy.tol,
                   "domains": {k: list(v) for k, v in sorted(policy.domains.items())}},
    }


def _sim_config(spec: TaskSpec, overrides: dict, scheme: str | None = None) -> SimConfig:
    blk = spec.raw.get("simulation")
    if not blk:
        raise SpecError("a [simulation] block is required", "simulation")
    try:
        default = "euler-maruyama" if isinstance(spec.system, ItoSDE) else "stratonovich-heun"
        seed = overrides.get("seed")
        seed = blk.get("seed", 42) if seed is None else seed
        return SimConfig(dt=float(blk["dt"]), T=float(blk["T"]), paths=int(blk["paths"]),
                         x0=tuple(blk["x0"]), seed=int(seed),
                         scheme=scheme or blk.get("scheme", default))
    except KeyError as exc:
        raise SpecError(f"missing key {exc}", "simulation") from exc
    except ValueError as exc:
        raise SpecError(str(exc), "simulation") from exc


def run_task(spec: TaskSpec, action: str, overrides: dict | None = None) -> dict:
    overrides = overrides or {}
    if action not in ACTIONS:
        raise SpecError(f"unknown action {action!r}")
    declared = spec.task.get("action")
    if declared is not None and declared != action:
        raise SpecError(f"spec is written for {declared!r}, not {action!r}", "task")
    pol = spec.policy
    for k in ("seed", "samples", "tol"):
        if overrides.get(k) is not None:
            pol = pol.replace(**{k: overrides[k]})
    policy = policy_for(spec.ctx, pol)
    report = _new_report(spec, action, pol)
    handler = globals()[f"_do_{action}"]
    handler(spec, report, policy, overrides)
    return report


def _selected_fields(spec: TaskSpec, allow_empty: bool = False) -> list:
    names = spec.task.get("fields") or ([spec.task["field"]] if "field" in spec.task else sorted(spec.fields))
    if not names and not allow_empty:
        raise SpecError("no vector fields to work on", "task")
    return names


def _do_verify(spec, report, policy, overrides):
    mode = spec.task.get("mode", "fiber")
    if mode == "fp":
        if not isinstance(spec.system, ItoSDE):
            raise SpecError("fp mode needs an Ito model", "task")
        builder = fp_determining
    else:
        builder = resolve_builder(spec.system, mode)
    ok = True
    # nothing to check is a vacuous pass
    for name in _selected_fields(spec, allow_empty=True):
        try:
            rs = builder(spec.system, spec.fields[name])
        except ValueError as exc:
            raise SpecError(f"{name}: {exc}", "task") from exc
        entries = _residual_entries(name, rs, policy)
        ok &= all(e["status"] != "nonzero" for e in entries)
        report["residuals"] += entries
    report["outputs"]["mode"] = mode
    report["verdict"] = ok


def _do_solve(spec, report, policy, overrides):
    if spec.ansatz is None:
        raise SpecError("solve needs an [ansatz] block", "ansatz")
    mode = spec.task.get("mode", "fiber")
    try:
        basis = solve_symmetries(spec.system, mode, spec.ansatz, policy)
    except ValueError as exc:
        raise SpecError(str(exc), "ansatz") from exc
    report["basis"] = basis.to_dict()
    expect = spec.task.get("expect_dimension")
    report["verdict"] = True if expect is None else basis.dimension == int(expect)


def _do_convert(spec, report, policy, overrides):
    sde = spec.system
    if isinstance(sde, ItoSDE):
        out, back = ito_to_strat(sde), None
        back = strat_to_ito(out)
        direction = "ito->strat"
    elif isinstance(sde, StratSDE):
        out = strat_to_ito(sde)
        back = ito_to_strat(out)
        direction = "strat->ito"
    else:
        raise SpecError("convert needs an Ito or Stratonovich model", "model")
    report["outputs"] = {"direction": direction, "converted": _sde_dict(out),
                         "round_trip": back == sde}
    report["verdict"] = back == sde


def _do_linearize(spec, report, policy, overrides):
    sde = spec.system
    if not isinstance(sde, ItoSDE) or sde.n != 1 or sde.m != 1:
        raise SpecError("linearize needs a scalar Ito model", "model")
    res = linearize(sde, policy)
    kz = kozlov_condition(sde, policy)
    report["outputs"] = {"linearization": res.to_dict(), "mu": to_str(kozlov_mu(sde)),
                         "kozlov": {"residual": to_str(kz.residual), "holds": kz.holds}}
    report["verdict"] = res.case != "not-linearizable" and res.verified is not False


def _do_reduce(spec, report, policy, overrides):
    sde = spec.system
    blk = spec.raw.get("coords")
    if not isinstance(sde, ItoSDE):
        raise SpecError("reduce needs an Ito model", "model")
    if not blk:
        raise SpecError("reduce needs a [coords] block", "coords")
    try:
        new_states = list(blk["y"].keys())
        y = [blk["y"][k] for k in new_states]
        new_ctx = spec.ctx.with_(states=tuple(new_states))
        inverse = {k: _parse(new_ctx, v, "coords") for k, v in blk["inverse"].items()}
        sym = spec.fields[blk["symmetry"]] if "symmetry" in blk else None
        y = [_parse(spec.ctx, v, "coords") for v in y]
        res = reduce_by_spatial_symmetry(sde, y, inverse, new_ctx, sym, policy)
    except KeyError as exc:
        raise SpecError(f"missing key {exc}", "coords") from exc
    except ValueError as exc:
        report["outputs"] = {"error": str(exc)}
        report["verdict"] = False
        return
    out = res.to_dict()
    if res.transformed.n == 1 and res.free_of_last:
        out["quadrature"] = quadrature_form(res.transformed, policy).to_dict()
    report["outputs"] = out
    report["verdict"] = res.free_of_last if sym is not None else True


def _strat_form(sde):
    return sde if isinstance(sde, StratSDE) else ito_to_strat(sde)


def _do_conserved(spec, report, policy, overrides):
    name = spec.task.get("charge") or (sorted(spec.charges)[0] if spec.charges else None)
    if name is None:
        raise SpecError("conserved needs a charge", "charges")
    if isinstance(spec.system, DynSystem):
        raise SpecError("conserved needs a stochastic model", "model")
    J = spec.charges[name]
    rs = strongly_conserved(_strat_form(spec.system), J)
    report["residuals"] = _residual_entries(name, rs, policy)
    ok = all(e["status"] != "nonzero" for e in report["residuals"])
    if "simulation" in spec.raw:
        ens = simulate(spec.system, _sim_config(spec, overrides))
        drift = conserved_drift(ens, J, spec.ctx)
        tol = float(spec.task.get("drift_tol", 1e-2))
        report["simulation"] = {**ens.summary(), "charge": name,
                                "max_relative_drift": _num(drift["max_relative_drift"]), "drift_tol": tol}
        report["simulation"] = _round_floats(report["simulation"])
        ok &= drift["max_relative_drift"] < tol
        _maybe_csv(ens, overrides)
    report["outputs"] = {"charge": name, "expression": to_str(J)}
    report["verdict"] = ok


def _do_bracket(spec, report, policy, overrides):
    pair = spec.task.get("pair")
    if not pair or len(pair) != 2:
        raise SpecError("bracket needs pair = [A, B]", "task")
    X, Y = (spec.fields[n] for n in pair)
    Z = lie_bracket(X, Y)
    report["outputs"] = {"pair": list(pair), "bracket": Z.to_dict()}
    if "expect" in spec.task:
        W = spec.fields[spec.task["expect"]]
        coef = Fraction(str(spec.task.get("factor", 1)))
        diff = [a - b * coef for a, b in zip(Z.components, W.components)]
        report["verdict"] = all(is_zero_many(diff, policy))
    else:
        report["verdict"] = True


def _round_floats(obj):
    if isinstance(obj, float):
        return _num(obj)
    if isinstance(obj, list):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    return obj


def _maybe_csv(ens, overrides):
    if overrides.get("csv"):
        write_csv(ens, overrides["csv"])


def _do_simulate(spec, report, policy, overrides):
    if isinstance(spec.system, DynSystem):
        raise SpecError("simulate needs a stochastic model", "model")
    cfg = _sim_config(spec, overrides)
    ens = simulate(spec.system, cfg)
    _maybe_csv(ens, overrides)
    sim = {**ens.summary(), "scheme": cfg.scheme, "dt": cfg.dt, "T": cfg.T, "seed": cfg.seed}
    ok = not ens.blowups
    if spec.task.get("compare"):
        if isinstance(spec.system, ItoSDE):
            other = ito_to_strat(spec.system)
            scheme = "stratonovich-heun"
        else:
            other = strat_to_ito(spec.system)
            scheme = "euler-maruyama"
        ocfg = SimConfig(cfg.dt, cfg.T, cfg.paths, cfg.x0, cfg.seed + 1, scheme)
        agree = moment_agreement(ens, simulate(other, ocfg), float(spec.task.get("sigmas", 5)))
        sim["comparison"] = agree
        ok &= agree["ok"]
    if "charge" in spec.task:
        drift = conserved_drift(ens, spec.charges[spec.task["charge"]], spec.ctx)
        tol = float(spec.task.get("drift_tol", 1e-2))
        sim["max_relative_drift"] = drift["max_relative_drift"]
        ok &= drift["max_relative_drift"] < tol
    report["simulation"] = _round_floats(sim)
    report["verdict"] = bool(ok)


def emit_report(report: dict, fmt: str = "json") -> bytes:
    if fmt == "json":
        return (json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")
    lines = [f"stosym {report['version']}  action={report['action']}  verdict={report['verdict']}"]
    for e in report["residuals"]:
        lines.append(f"  {e['field']} [{e['label']}] {e['status']} max|r|={e['max_abs']}")
    if report["basis"]:
        lines.append(f"  dimension {report['basis']['dimension']}")
        lines += [f"    {f}" for f in report["basis"]["fields"]]
    if report["outputs"]:
        lines.append("  outputs: " + json.dumps(report["outputs"], sort_keys=True))
    if report["simulation"]:
        lines.append("  simulation: " + json.dumps(report["simulation"], sort_keys=True)[:400])
    return ("\n".join(lines) + "\n").encode("utf-8")


# ---------------------------------------------------------------- entry point

def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="stosym", description="Symmetry analysis for SDEs.")
    ap.add_argument("action", choices=ACTIONS)
    ap.add_argument("specfile")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--samples", type=int)
    ap.add_argument("--tol", type=float)
    ap.add_argument("--json", dest="json_path")
    ap.add_argument("--csv", dest="csv_path")
    ap.add_argument("--format", choices=("json", "text"), default="json")
    args = ap.parse_args(argv)
    try:
        spec = load_spec(args.specfile)
        report = run_task(spec, args.action, {"seed": args.seed, "samples": args.samples,
                                              "tol": args.tol, "csv": args.csv_path})
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read spec: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as an internal error
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    if args.json_path:
        Path(args.json_path).write_bytes(emit_report(report, "json"))
        sys.stdout.buffer.write(emit_report(report, "text"))
    else:
        sys.stdout.buffer.write(emit_report(report, args.format))
    return 0 if report["verdict"] in (True, None) else 1


if __name__ == "__main__":
    sys.exit(main())
