"""``sddde simulate|verify|budget``.

Exit codes: 0 all checks pass, 1 a check failed, 2 usage or configuration error.
Outputs are deterministic in (config, seed); each file carries the config hash
and tool version.  Wall-clock time is reported on stderr only.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
import time
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import __version__
from .histories import History, HistoryPair, random_lipschitz, random_pair
from .integrator import IntegrationError, SolverConfig, detect_equilibrium, integrate
from .invariance import (BoundConstants, budgets, delta_f, f_l, f_tau, horizons, ratio_l, ratio_tau)
from .model import ModelParams, equilibrium
from .retraction import DomainSpec, retract

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_PROFILE = {"oneOf": [_NUM, {"type": "object", "additionalProperties": False,
                             "properties": {"kind": {"type": "string"},
                                            "coeffs": {"type": "array", "items": _NUM, "maxItems": 4}}}]}
_HISTORY = {"type": "object", "required": ["h", "nodes"], "additionalProperties": False,
            "properties": {"h": _POS, "nodes": {"type": "array", "minItems": 2}}}

MODEL_KEYS = ("a_w", "p_w", "mu_w", "k_a", "k_p", "mu", "x1", "x2", "b", "K", "eps", "g_family")

SCHEMA = {
    "type": "object",
    "required": ["model", "run"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "required": list(MODEL_KEYS),
            "additionalProperties": False,
            "properties": {
                **{k: _NUM for k in ("a_w", "p_w", "mu_w", "k_a", "k_p")},
                "k_d": _NONNEG, "mu": _POS, "x1": _NUM, "x2": _NUM, "b": _POS, "K": _POS, "eps": _POS,
                "alpha_spec": _PROFILE, "mu_u_spec": _PROFILE, "z_cap": _POS,
                "g_family": {"enum": ["const", "exp", "division", "rational"]},
                "g_params": {"type": "object", "additionalProperties": False,
                             "properties": {"kind": {"type": "string"}, "base": _NUM, "rate": _NUM,
                                            "p1": _PROFILE, "p2": _PROFILE}},
            },
        },
        "initial": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["nodes", "random", "equilibrium", "equilibrium_perturbed", "constant"]},
                "phi": _HISTORY, "psi": _HISTORY,
                "seed": {"type": "integer", "minimum": 0},
                "A": _NONNEG, "B": _NONNEG, "R": _NONNEG, "m": {"type": "integer", "minimum": 2},
                "w": _NONNEG, "v": _NONNEG,
                "amplitude": _NONNEG,
                "which": {"enum": ["positive", "trivial"]},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"step": _POS, "corrector_passes": {"type": "integer", "minimum": 0},
                           "inner_step": _POS, "nodes_per_step": {"type": "integer", "minimum": 1},
                           "root_tol": _POS, "residual_tol": _POS},
        },
        "run": {
            "type": "object",
            "required": ["T", "output_dt"],
            "additionalProperties": False,
            "properties": {"T": _NONNEG, "output_dt": _POS},
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"csv": {"type": "string"}, "json": {"type": "string"}, "svg": {"type": "string"}},
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer", "minimum": 0},
                "retraction_n": {"type": "integer", "minimum": 1},
                "threshold_n": {"type": "integer", "minimum": 1},
                "semiflow_n": {"type": "integer", "minimum": 1},
                "ensemble": {"type": "integer", "minimum": 1},
                "A": _POS, "T": _POS, "w_cap": {"type": "boolean"},
            },
        },
        "budget": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"A": _POS, "B": _POS, "R": _POS, "T": _POS},
        },
    },
}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    validate_config(doc)
    return doc


def validate_config(doc: dict) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema error at {where}: {exc.message}") from exc


def config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def apply_overrides(doc: dict, args) -> dict:
    doc = copy.deepcopy(doc)
    if getattr(args, "T", None) is not None:
        doc["run"]["T"] = args.T
    if getattr(args, "seed", None) is not None:
        if "initial" in doc and doc["initial"]["kind"] in ("random", "equilibrium_perturbed"):
            doc["initial"]["seed"] = args.seed
        doc.setdefault("verify", {})["seed"] = args.seed
    if getattr(args, "ensemble", None) is not None:
        doc.setdefault("verify", {})["ensemble"] = args.ensemble
    validate_config(doc)
    return doc


def build_params(doc: dict) -> ModelParams:
    try:
        return ModelParams.from_dict(doc["model"])
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid model parameters: {exc}") from exc


def build_solver(doc: dict) -> SolverConfig:
    try:
        return SolverConfig(**doc.get("solver", {}))
    except ValueError as exc:
        raise ConfigError(f"invalid solver settings: {exc}") from exc


def build_initial(doc: dict, params: ModelParams) -> HistoryPair:
    pair = _initial(doc, params)
    if abs(pair.h - params.h) > 1e-12 * max(1.0, params.h):
        raise ConfigError(f"initial histories have h={pair.h} but the model has h={params.h}")
    if min(np.min(pair.phi.values), np.min(pair.psi.values)) < 0:
        raise ConfigError("initial histories must be nonnegative")
    return pair


def _initial(doc: dict, params: ModelParams) -> HistoryPair:
    spec = doc.get("initial", {"kind": "random"})
    kind, h = spec["kind"], params.h
    try:
        if kind == "nodes":
            if "phi" not in spec or "psi" not in spec:
                raise ConfigError("initial kind 'nodes' needs phi and psi")
            return HistoryPair(History.from_dict(spec["phi"]), History.from_dict(spec["psi"]))
        if kind == "random":
            return random_pair(spec.get("seed", 0), h, spec.get("A", 1.0), spec.get("B", 1.0),
                               spec.get("R", 2.0), spec.get("R", 2.0), spec.get("m", 9))
        if kind == "constant":
            return HistoryPair.constant(h, spec.get("w", 0.0), spec.get("v", 0.0))
        eq = (0.0, 0.0) if spec.get("which", "positive") == "trivial" else equilibrium(params)
        if eq is None:
            raise ConfigError("model has no positive equilibrium; use which='trivial'")
        base = HistoryPair.constant(h, *eq)
        if kind == "equilibrium":
            return base
        amp = spec.get("amplitude", 1e-2)
        ss = np.random.SeedSequence(spec.get("seed", 0))
        u = random_lipschitz(ss.spawn(1)[0], h, 2, 2.0 * amp, spec.get("R", 2.0) * amp, spec.get("m", 9))
        return HistoryPair.from_stacked(retract(base.stacked() + u - amp, DomainSpec(0.0, 2)))
    except ValueError as exc:
        raise ConfigError(f"invalid initial condition: {exc}") from exc


def _fmt(x: float) -> str:
    return repr(float(x))


def _header(chash: str) -> dict:
    return {"tool": "sddde", "version": __version__, "config_hash": chash}


def _json_safe(x):
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, chash: str, columns: dict) -> None:
    names = list(columns)
    rows = zip(*(np.asarray(columns[n]) for n in names))
    lines = [f"# sddde {__version__} config_hash={chash}", ",".join(names)]
    lines += [",".join(_fmt(x) for x in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _context(args):
    doc = apply_overrides(load_config(args.config), args)
    return doc, config_hash(doc), build_params(doc)


def cmd_simulate(args) -> int:
    doc, chash, params = _context(args)
    config = build_solver(doc)
    pair = build_initial(doc, params)
    T, odt = float(doc["run"]["T"]), float(doc["run"]["output_dt"])
    n = round(T / odt)
    if abs(n * odt - T) > 1e-9 * max(1.0, T):
        raise ConfigError(f"run.T={T} is not a multiple of run.output_dt={odt}")
    t0 = time.perf_counter()
    tr = integrate(params, pair, T, config)
    elapsed = time.perf_counter() - t0
    t = np.linspace(0.0, T, n + 1)
    w, v = tr(t)
    w, v = np.atleast_1d(w), np.atleast_1d(v)
    min_state = tr.min_state()
    cand = detect_equilibrium(tr) if T >= 4.0 * params.h else None
    eq = equilibrium(params)
    outs = doc.get("outputs", {"csv": "trajectory.csv", "json": "trajectory.json"})
    out = _out_dir(args)
    if "csv" in outs:
        _write_csv(out / outs["csv"], chash, {"t": t, "w": w, "v": v})
    if "json" in outs:
        meta = {
            **_header(chash),
            "params_hash": config_hash(doc["model"]),
            "params": params.to_dict(),
            "step": tr.step, "T": T, "output_dt": odt, "rows": n + 1,
            "derived": {"qbar": params.qbar, "kj": params.kj, "h": params.h, "tau_lower": params.tau_lower,
                        "equilibrium": list(eq) if eq else None},
            "diagnostics": {
                "min_state": min_state, "positive": min_state >= -1e-9, "nodes": len(tr.times),
                "final": {"w": float(tr.W[-1]), "v": float(tr.V[-1])},
                "equilibrium_limit": None if cand is None else {"w": cand.w, "v": cand.v, "residual": cand.residual},
            },
        }
        _write_json(out / outs["json"], meta)
    if "svg" in outs:
        from .plotting import save_svg, trajectory_figure

        tt = t[t >= tr.forward_times[0]]
        fig = trajectory_figure(t, w, v, tt, tr.tau_at(tt), title=f"T = {T:g}")
        save_svg(fig, out / outs["svg"], f"sddde {__version__} config_hash={chash}")
    print(f"simulated T={T:g} with step {tr.step:.6g}: {n + 1} rows, min state {min_state:.3e}")
    print(f"runtime {elapsed:.2f}s", file=sys.stderr)
    return EXIT_OK if min_state >= -1e-9 else EXIT_FAIL


def cmd_verify(args) -> int:
    from . import suites

    doc, chash, params = _context(args)
    config = build_solver(doc)
    vc = doc.get("verify", {})
    seed = vc.get("seed", 0)
    names = suites.SUITES if args.suite == "all" else (args.suite,)
    runners = {
        "retraction": lambda: suites.retraction_suite(vc.get("retraction_n", 500), seed, params),
        "threshold": lambda: suites.threshold_suite(params, vc.get("threshold_n", 1000), seed),
        "invariance": lambda: suites.invariance_suite(params, vc.get("A"), vc.get("T"), vc.get("ensemble", 200),
                                                      seed, config, vc.get("w_cap", False)),
        "semiflow": lambda: suites.semiflow_suite(params, vc.get("semiflow_n", 50), seed, config),
    }
    out = _out_dir(args)
    ok = True
    for name in names:
        t0 = time.perf_counter()
        try:
            rep = runners[name]()
        except (ValueError, IntegrationError) as exc:
            rep = {"suite": name, "checks": [{"name": "error", "pass": False, "message": str(exc)}],
                   "all_pass": False}
        print(f"{name} suite runtime {time.perf_counter() - t0:.2f}s", file=sys.stderr)
        _write_json(out / f"verify_{name}.json", {**_header(chash), "seed": seed, **rep})
        for c in rep["checks"]:
            status = c.get("status", "pass" if c["pass"] else "fail")
            print(f"{'PASS' if c['pass'] else 'FAIL'}  {name}/{c['name']}" + (f"  ({status})" if status not in ("pass", "fail") else ""))
        ok &= rep["all_pass"]
    return EXIT_OK if ok else EXIT_FAIL


def _table(rows) -> str:
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"  {k.ljust(width)}  {v}" for k, v in rows)


def budget_report(params: ModelParams, A: float, T: Optional[float], B: Optional[float], R: Optional[float]):
    """(report dict, list of failed preconditions)."""
    c = BoundConstants.from_params(params)
    rep = {"constants": {"kj": c.kj, "mu": c.mu, "qbar": c.qbar, "tau_lower": c.tau_lower}, "A": A}
    failed = []
    if T is not None:
        bd, be = budgets(A, T, c)
        rep["T"] = T
        rep["budget_d"] = {"B": bd.B, "R": bd.R}
        rep["budget_e"] = {"B": be.B, "R": be.R}
    if B is not None:
        rep["B"], rep["R"] = B, R
        if not A * c.kj / c.mu < B:
            failed.append(f"A kj / mu < B fails: A kj / mu = {A * c.kj / c.mu:.6g}, B = {B:.6g}")
        if R is not None and not c.mu * B <= R:
            failed.append(f"mu B <= R fails: mu B = {c.mu * B:.6g}, R = {R:.6g}")
        if not failed and R is not None:
            rep["horizons"] = horizons(A, B, R, c).to_dict()
        if not A * c.kj < c.mu * B:
            failed.append(f"delta needs A kj < mu B: A kj = {A * c.kj:.6g}, mu B = {c.mu * B:.6g}")
        elif R is None or c.mu * B <= R:
            d = delta_f(A, B, c, R)
            rep["delta"] = d
            rep["delta_horizon"] = c.tau_lower + d
    rep["preconditions_failed"] = failed
    return rep, failed


def cmd_budget(args) -> int:
    doc, chash, params = _context(args)
    bc = doc.get("budget", {})
    A = args.A if args.A is not None else bc.get("A")
    T = args.T if args.T is not None else bc.get("T")
    B = args.B if args.B is not None else bc.get("B")
    R = args.R if args.R is not None else bc.get("R")
    if A is None or not A > 0:
        raise ConfigError("budget needs A > 0 (--A or budget.A)")
    if T is None and B is None:
        raise ConfigError("budget needs T or B (and R)")
    rep, failed = budget_report(params, A, T, B, R)
    rows = [(k, f"{v:.10g}") for k, v in rep["constants"].items()] + [("A", f"{A:.10g}")]
    if "T" in rep:
        rows += [("T", f"{T:.10g}"),
                 ("B_d", f"{rep['budget_d']['B']:.10g}"), ("R_d", f"{rep['budget_d']['R']:.10g}"),
                 ("B_e", f"{rep['budget_e']['B']:.10g}"), ("R_e", f"{rep['budget_e']['R']:.10g}")]
    if "B" in rep:
        rows += [("B", f"{B:.10g}"), ("R", "-" if R is None else f"{R:.10g}")]
    for k, v in rep.get("horizons", {}).items():
        rows.append((k, f"{v:.10g}"))
    if "delta" in rep:
        rows += [("delta", f"{rep['delta']:.10g}"), ("tau_lower + delta", f"{rep['delta_horizon']:.10g}")]
    print(_table(rows))
    for msg in failed:
        print(f"precondition failed: {msg}")
    full = {**_header(chash), **rep}
    print(json.dumps(_json_safe(full), sort_keys=True))
    if args.out:
        out = _out_dir(args)
        _write_json(out / "budget.json", full)
        c = BoundConstants.from_params(params)
        t_hi = T if T is not None else max(rep.get("horizons", {}).get("t_e", 1.0), 1.0)
        t = np.linspace(t_hi / 400.0, 2.0 * t_hi if math.isfinite(t_hi) else 2.0, 400)
        _write_csv(out / "bounds.csv", chash, {"t": t, "f_l": f_l(t, c), "f_tau": f_tau(t, c),
                                                "ratio_l": ratio_l(t, c), "ratio_tau": ratio_tau(t, c)})
    return EXIT_FAIL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sddde", description="Threshold-delay stem-cell model: simulate and verify.")
    p.add_argument("--version", action="version", version=f"sddde {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON scenario file")
        sp.add_argument("--seed", type=int, help="override the random seed")
        sp.add_argument("--out", help="output directory (default: current)")
        sp.add_argument("--T", type=float, help="override the time horizon")
        sp.add_argument("--ensemble", type=int, help="override the invariance ensemble size")
        return sp

    common(sub.add_parser("simulate", help="integrate one scenario and write CSV/JSON/SVG"))
    v = common(sub.add_parser("verify", help="run verification suites"))
    v.add_argument("suite", nargs="?", default="all", choices=("all",) + ("retraction", "threshold",
                                                                          "invariance", "semiflow"))
    b = common(sub.add_parser("budget", help="invariance budgets and horizons"))
    b.add_argument("--A", type=float, help="bound on ||phi||")
    b.add_argument("--B", type=float, help="target bound on v (with --R gives horizons and delta)")
    b.add_argument("--R", type=float, help="target Lipschitz cap on v")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    handlers = {"simulate": cmd_simulate, "verify": cmd_verify, "budget": cmd_budget}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
