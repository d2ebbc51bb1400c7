"""Numerical experiments on the semiflow: semigroup identity, continuous dependence,
positivity, Lipschitz propagation and the equilibrium-limit certificate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .histories import History, HistoryPair, lip, pair_distance, random_lipschitz, sup_norm
from .integrator import SolverConfig, detect_equilibrium, integrate, semiflow
from .model import ModelParams
from .parallel import pmap
from .retraction import DomainSpec, retract

SEMIGROUP_TOL = 1e-7
POSITIVITY_TOL = 1e-9
LIP_REL = 1e-9
EQUILIBRIUM_REL = 1e-6


@dataclass
class CheckReport:
    """``passed`` holds iff ``worst_residual <= threshold``; ``status`` may also be ``inconclusive``."""

    name: str
    parameters: dict
    samples: int
    worst_residual: float
    threshold: float
    passed: bool
    witnesses: list = field(default_factory=list)
    status: str = ""

    def __post_init__(self):
        if not self.status:
            self.status = "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        return {"name": self.name, "parameters": self.parameters, "samples": self.samples,
                "worst_residual": self.worst_residual, "threshold": self.threshold,
                "pass": self.passed, "status": self.status, "witnesses": self.witnesses}


def _snap(x: float, dt: float) -> float:
    return round(x / dt) * dt


def check_semigroup(params: ModelParams, pair: HistoryPair, s: float, t: float,
                    config: Optional[SolverConfig] = None) -> CheckReport:
    """||S(t, S(s, pair)) - S(s + t, pair)||; s and t are snapped to the step grid so both paths share steps."""
    config = config or SolverConfig()
    dt = config.resolve_step(params)
    s_, t_ = _snap(s, dt), _snap(t, dt)
    if s_ < 0 or t_ < 0:
        raise ValueError("s and t must be nonnegative")
    direct = semiflow(params, pair, s_ + t_, config)
    composed = semiflow(params, semiflow(params, pair, s_, config), t_, config)
    res = pair_distance(direct, composed)
    return CheckReport("semigroup", {"s": s_, "t": t_, "step": dt}, 1, res, SEMIGROUP_TOL, res <= SEMIGROUP_TOL,
                       [{"s": s_, "t": t_, "residual": res}])


def perturbation_direction(pair: HistoryPair, seed, R: float = 1.0, m: int = 17) -> HistoryPair:
    """A random Lipschitz pair with sup norm 1 over both components."""
    ss = np.random.SeedSequence(seed)
    a, b = ss.spawn(2)
    h = pair.h
    u = random_lipschitz(a, h, 1, 2.0, R, m) - 1.0
    v = random_lipschitz(b, h, 1, 2.0, R, m) - 1.0
    scale = max(sup_norm(u), sup_norm(v))
    if scale == 0:
        u = History.constant(h, 1.0)
        scale = 1.0
    return HistoryPair(u * (1.0 / scale), v * (1.0 / scale))


def _perturb(pair: HistoryPair, direction: HistoryPair, scale: float) -> HistoryPair:
    stacked = pair.stacked() + direction.stacked() * scale
    return HistoryPair.from_stacked(retract(stacked, DomainSpec(B=0.0, n=2)))


def _deviation(a, b, T: float) -> float:
    g = np.union1d(a.dense_grid(), b.dense_grid())
    g = g[(g >= 0) & (g <= T)]
    wa, va = a(g)
    wb, vb = b(g)
    return float(max(np.max(np.abs(wa - wb)), np.max(np.abs(va - vb))))


def default_scales(n: int = 5, start: float = 1e-2) -> list:
    return [start * 2.0 ** -k for k in range(n)]


def check_continuous_dependence(params: ModelParams, pair: HistoryPair, perturbation_scales: Optional[Sequence[float]] = None,
                                config: Optional[SolverConfig] = None, T: Optional[float] = None,
                                seed=0) -> CheckReport:
    """Deviation of perturbed solutions on [0, T] (default 3h) for shrinking perturbations.

    Passes when deviations strictly decrease and the last is at most a tenth
    of the first.  No rate is asserted.
    """
    config = config or SolverConfig()
    scales = list(default_scales() if perturbation_scales is None else perturbation_scales)
    if any(b >= a for a, b in zip(scales, scales[1:])) or min(scales, default=1.0) <= 0:
        raise ValueError("scales must be positive and strictly decreasing")
    T = 3.0 * params.h if T is None else T
    base = integrate(params, pair, T, config)
    u = perturbation_direction(pair, seed)
    pert = [_perturb(pair, u, s) for s in scales]
    devs = pmap(lambda p: _deviation(base, integrate(params, p, T, config), T), pert)
    dists = [pair_distance(p, pair) for p in pert]
    decreasing = all(b < a for a, b in zip(devs, devs[1:]))
    shrink = devs[-1] / devs[0] if devs[0] > 0 else 0.0
    passed = decreasing and shrink <= 0.1
    wit = [{"scale": s, "distance": d, "deviation": v} for s, d, v in zip(scales, dists, devs)]
    return CheckReport("continuous_dependence", {"T": T, "seed": str(seed), "scales": scales}, len(scales),
                       shrink, 0.1, passed, wit)


def check_positivity(params: ModelParams, pairs: Sequence[HistoryPair], T: float,
                     config: Optional[SolverConfig] = None) -> CheckReport:
    """min(w, v) over the dense grid of [0, T] stays above -1e-9."""
    config = config or SolverConfig()
    mins = pmap(lambda p: integrate(params, p, T, config).min_state(), pairs)
    k = int(np.argmin(mins))
    worst = -float(mins[k])
    return CheckReport("positivity", {"T": T}, len(pairs), worst, POSITIVITY_TOL, worst <= POSITIVITY_TOL,
                       [{"member": k, "min_state": float(mins[k])}])


def check_lip_propagation(params: ModelParams, pair: HistoryPair, t_grid: Sequence[float],
                          config: Optional[SolverConfig] = None) -> CheckReport:
    """lip(x_t) <= max(lip(pair), sup |x'| on [0, t]) (1 + 1e-9) for every t in the grid.

    The residual is the largest relative excess lip / bound - 1.
    """
    config = config or SolverConfig()
    T = max(t_grid)
    tr = integrate(params, pair, T, config)
    lip0 = max(lip(pair.phi), lip(pair.psi))
    worst, wit = -math.inf, []
    for t in t_grid:
        seg = tr.segment(t)
        val = max(lip(seg.phi), lip(seg.psi))
        if not math.isfinite(val):
            return CheckReport("lip_propagation", {"T": T}, len(t_grid), math.inf, LIP_REL, False, [{"t": t}])
        dmax = max(tr.max_abs_derivative(0.0, t)) if t > 0 else 0.0
        bound = max(lip0, dmax)
        excess = val / bound - 1.0 if bound > 0 else (0.0 if val == 0 else math.inf)
        wit.append({"t": float(t), "lip": val, "bound": bound})
        worst = max(worst, excess)
    return CheckReport("lip_propagation", {"T": T}, len(t_grid), worst, LIP_REL, worst <= LIP_REL, wit)


def certify_equilibrium_limit(params: ModelParams, pair: HistoryPair, T_max: float,
                              config: Optional[SolverConfig] = None, window: Optional[float] = None,
                              tol: Optional[float] = None) -> CheckReport:
    """Run to T_max and, if the trailing window is flat, check the limit is an equilibrium.

    No detected limit gives status ``inconclusive``, which is not a failure.
    """
    tr = integrate(params, pair, T_max, config)
    cand = detect_equilibrium(tr, window, tol)
    if cand is None:
        return CheckReport("equilibrium_limit", {"T_max": T_max}, 1, math.nan, math.nan, True,
                           [{"w_end": float(tr.W[-1]), "v_end": float(tr.V[-1])}], status="inconclusive")
    thr = EQUILIBRIUM_REL * (1.0 + max(abs(cand.w), abs(cand.v)))
    ok = cand.residual <= thr
    return CheckReport("equilibrium_limit", {"T_max": T_max}, 1, cand.residual, thr, ok,
                       [{"w": cand.w, "v": cand.v, "residual": cand.residual, "variation": cand.variation}],
                       status="certified" if ok else "fail")
