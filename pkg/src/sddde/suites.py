"""Verification suites run by ``sddde verify``.  Each returns a JSON-ready report
``{"suite", "checks": [{"name", "pass", ...}], "all_pass"}``."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .histories import History, HistoryPair, lip, random_lipschitz, random_pair, sup_norm
from .ingredients import GFamily
from .integrator import SolverConfig
from .invariance import (BoundConstants, InvarianceBudget, bound_lemma_checks, budget_e, delta_f,
                         verify_invariance)
from .model import ModelParams, rhs_stacked
from .retraction import DomainSpec, check_feedback, counterexample_distances, retract
from .semiflow_checks import (certify_equilibrium_limit, check_continuous_dependence, check_lip_propagation,
                              check_positivity, check_semigroup)
from .threshold import MaturationField, solve_maturation, tau_bounds, validate_G

DIST_TOL = 1e-12
TAU_REL_TOL = 1e-8
CONST_G_TOL = 1e-10


def _report(suite: str, checks: list) -> dict:
    return {"suite": suite, "checks": checks, "all_pass": all(c["pass"] for c in checks)}


def mixed_sign_history(seed, h: float, d: int, m: int = 9) -> History:
    """Random Lipschitz history with values in [-1, 1]."""
    rng = np.random.default_rng(seed)
    R = float(rng.uniform(0.5, 8.0))
    return random_lipschitz(rng.integers(2**63), h, d, 2.0, R, m) - 1.0


def retraction_suite(n: int = 500, seed=0, params: Optional[ModelParams] = None, B: float = 0.0) -> dict:
    """Nonexpansiveness, idempotence and (with params) the boundary feedback condition."""
    spec = DomainSpec(B=B, n=2)
    h = params.h if params is not None else 1.0
    ss = np.random.SeedSequence(seed)
    lip_bad, lip_worst, dist_worst, idem_bad = 0, -math.inf, -math.inf, 0
    kids = ss.spawn(2 * n)
    for k in range(n):
        a = mixed_sign_history(kids[2 * k], h, 2)
        b = mixed_sign_history(kids[2 * k + 1], h, 2)
        ra, rb = retract(a, spec), retract(b, spec)
        excess = lip(ra) - lip(a)
        lip_worst = max(lip_worst, excess)
        if excess > 0.0:
            lip_bad += 1
        dist_worst = max(dist_worst, sup_norm(ra - rb) - sup_norm(a - b))
        if not retract(ra, spec).same_nodes(ra):
            idem_bad += 1
    checks = [
        {"name": "lip_nonexpansive", "samples": n, "violations": lip_bad, "worst_excess": lip_worst,
         "pass": lip_bad == 0},
        {"name": "distance_nonexpansive", "samples": n, "worst_excess": dist_worst, "tol": DIST_TOL,
         "pass": dist_worst <= DIST_TOL},
        {"name": "idempotent", "samples": n, "violations": idem_bad, "pass": idem_bad == 0},
    ]
    if params is not None:
        rng = np.random.default_rng(ss.spawn(1)[0])
        samples = []
        for k in range(20):
            x = random_lipschitz(rng.integers(2**63), h, 2, 1.0, 2.0, 9)
            vals = x.values.copy()
            vals[-1, k % 2] = -B
            if B == 0.0:
                vals = np.maximum(vals, 0.0)
            samples.append(History(h, x.times, vals))
        fb = check_feedback(rhs_stacked(params), spec, samples)
        checks.append({"name": "feedback", "samples": len(samples), "pass": fb.all_pass,
                       "min_f": min(min(s["f_values"]) for s in fb.samples if s["f_values"])})
    diag = counterexample_distances([2, 4, 8, 16, 32])
    checks.append({"name": "closure_counterexample", "diagnostic": diag, "pass": True})
    return _report("retraction", checks)


def threshold_suite(params: ModelParams, n: int = 1000, seed=0, psi_max: float = 1.0, R: float = 2.0) -> dict:
    """(G) grid validation, bracket, residual and step-halving agreement of tau, plus constant g."""
    f = params.field
    val = validate_G(f, psi_max=psi_max)
    lo, hi = tau_bounds(f)
    ss = np.random.SeedSequence(seed)
    inner = f.default_inner_step
    bracket_bad, res_worst, rel_worst = 0, 0.0, 0.0
    for child in ss.spawn(n):
        psi = random_lipschitz(child, f.h, 1, psi_max, R, 17)
        r = solve_maturation(f, psi, inner_step=inner)
        r2 = solve_maturation(f, psi, inner_step=inner / 2)
        if not (lo - 1e-12 <= r.tau <= hi + 1e-12):
            bracket_bad += 1
        res_worst = max(res_worst, r.residual)
        rel_worst = max(rel_worst, abs(r.tau - r2.tau) / r2.tau)
    const_err = 0.0
    for c in (f.eps, 0.5 * (f.eps + f.K), f.K):
        fc = MaturationField(f.x1, f.x2, f.b, f.K, f.eps, GFamily.const(c))
        psi = random_lipschitz(ss.spawn(1)[0], f.h, 1, psi_max, R, 9)
        const_err = max(const_err, abs(solve_maturation(fc, psi).tau - (f.x2 - f.x1) / c))
    checks = [
        {"name": "G_valid", "pass": val.all_pass, "conditions": val.to_dict()["conditions"]},
        {"name": "tau_bracket", "samples": n, "violations": bracket_bad, "bracket": [lo, hi],
         "pass": bracket_bad == 0},
        {"name": "threshold_residual", "samples": n, "worst": res_worst, "tol": 1e-9, "pass": res_worst <= 1e-9},
        {"name": "step_halving", "samples": n, "worst_rel": rel_worst, "tol": TAU_REL_TOL,
         "pass": rel_worst <= TAU_REL_TOL},
        {"name": "constant_g", "worst_abs": const_err, "tol": CONST_G_TOL, "pass": const_err <= CONST_G_TOL},
    ]
    return _report("threshold", checks)


def auto_budget_A(params: ModelParams, T: float) -> float:
    """A small enough that the threshold budget keeps B below ~1."""
    c = BoundConstants.from_params(params)
    return 1.0 / max(budget_e(1.0, T, c).B, 1e-12)


def invariance_suite(params: ModelParams, A: Optional[float] = None, T: Optional[float] = None,
                     ensemble: int = 200, seed=0, config: Optional[SolverConfig] = None,
                     w_cap: bool = False) -> dict:
    T = 2.0 * params.h if T is None else T
    A = auto_budget_A(params, T) if A is None else A
    c = BoundConstants.from_params(params)
    checks = []
    bl = bound_lemma_checks(c, A=A, B=2.0 * A * c.kj / c.mu)
    checks.append({"name": "bound_lemmas", "pass": bl.all_pass, **bl.to_dict()})
    budgets = [InvarianceBudget.from_case("threshold", A, T, c, w_cap),
               InvarianceBudget.from_case("linear", A, T, c, w_cap)]
    if c.qbar > 0:
        B = 2.0 * A * c.kj / c.mu
        budgets.append(InvarianceBudget(A, B, c.mu * B, c.tau_lower + delta_f(A, B, c), "delta", w_cap))
    for bud in budgets:
        rep = verify_invariance(params, bud, ensemble, seed, config)
        checks.append({"name": f"invariance_{bud.case}", "pass": rep.all_pass, **rep.to_dict()})
    return _report("invariance", checks)


def semiflow_suite(params: ModelParams, n: int = 50, seed=0, config: Optional[SolverConfig] = None,
                   T_max: Optional[float] = None) -> dict:
    config = config or SolverConfig()
    h = params.h
    ss = np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss.spawn(1)[0])
    pairs = [random_pair(child, h, 1.0, 1.0, 2.0, 2.0) for child in ss.spawn(n)]
    worst = 0.0
    for p in pairs:
        s, t = rng.uniform(0.0, 2.0 * h, size=2)
        worst = max(worst, check_semigroup(params, p, s, t, config).worst_residual)
    identity = all(check_semigroup(params, p, 0.0, 0.0, config).worst_residual == 0.0 for p in pairs[:5])
    cd = check_continuous_dependence(params, pairs[0], config=config, seed=seed)
    pos = check_positivity(params, pairs, 5.0 * h, config)
    lips = [check_lip_propagation(params, p, [0.5 * h, h, 2.0 * h, 3.0 * h], config) for p in pairs[:10]]
    eq = certify_equilibrium_limit(params, pairs[0], T_max or 80.0 * h, config)
    checks = [
        {"name": "semigroup", "samples": n, "worst": worst, "tol": 1e-7, "pass": worst <= 1e-7},
        {"name": "identity_at_zero", "pass": identity},
        {"name": "continuous_dependence", **cd.to_dict()},
        {"name": "positivity", **pos.to_dict()},
        {"name": "lip_propagation", "pass": all(r.passed for r in lips),
         "worst": max(r.worst_residual for r in lips)},
        {"name": "equilibrium_limit", **eq.to_dict()},
    ]
    return _report("semiflow", checks)


SUITES = ("retraction", "threshold", "invariance", "semiflow")
