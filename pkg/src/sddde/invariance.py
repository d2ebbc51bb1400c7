"""Growth bounds for v, invariance budgets for C_{B,R}, and ensemble verification.

All bound functions take a :class:`BoundConstants` (or anything exposing
``kj``, ``mu``, ``qbar`` and ``tau_lower``, such as a :class:`ModelParams`).
The strict inequalities between the bounds need ``qbar > 0``; with
``qbar <= 0`` the exponential envelope never exceeds 1 and several of them
degenerate to equalities or reverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import exprel

from .histories import History, HistoryPair, lip, random_lipschitz, sup_norm
from .parallel import pmap

SLACK = 1e-6
STRICT_FLOOR = 1e-12
T_MIN = 1e-6
PEAK_TOL = 1e-9
TRAJ_TOL = 1e-7
DV_RTOL = 1e-6  # dense-output derivatives are only O(dt^3) accurate


@dataclass(frozen=True)
class BoundConstants:
    kj: float
    mu: float
    qbar: float
    tau_lower: float

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.kj < 0 or self.tau_lower <= 0:
            raise ValueError("need kj >= 0 and tau_lower > 0")

    @classmethod
    def from_params(cls, params) -> "BoundConstants":
        return cls(float(params.kj), float(params.mu), float(params.qbar), float(params.tau_lower))


def _c(c) -> BoundConstants:
    return c if isinstance(c, BoundConstants) else BoundConstants.from_params(c)


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def q_e(t, c):
    c = _c(c)
    t = np.asarray(t, dtype=float)
    return _out(np.where(t <= 0, 1.0, np.exp(c.qbar * np.maximum(t, 0.0))))


def _mix(t, mu, q):
    """(e^{q t} - e^{-mu t}) / (mu + q) without cancellation near mu + q = 0 or overflow for large t."""
    x = (mu + q) * t
    big = x > 30.0
    with np.errstate(over="ignore", invalid="ignore"):
        small = t * np.exp(-mu * t) * exprel(np.where(big, 0.0, x))
        large = (np.exp(q * t) - np.exp(-mu * t)) / np.where(big, mu + q, 1.0)
    return np.where(big, large, small)


def f_l(t, c):
    """kj / (mu + qbar) (e^{qbar t} - e^{-mu t}), written with exprel so mu + qbar = 0 is harmless."""
    c = _c(c)
    t = np.asarray(t, dtype=float)
    return _out(c.kj * _mix(t, c.mu, c.qbar))


def f_tau(t, c):
    """kj e^{-mu t} * integral_0^t e^{mu s} q_e(s - tau_lower) ds."""
    c = _c(c)
    t = np.asarray(t, dtype=float)
    lo = c.tau_lower
    first = c.kj * t * exprel(-c.mu * t)
    r = np.maximum(t - lo, 0.0)
    second = c.kj * (lo * np.exp(-c.mu * r) * exprel(-c.mu * lo)
                     + _mix(r, c.mu, c.qbar))
    return _out(np.where(t <= lo, first, second))


def f_tau_closed(t, c):
    """The two-branch closed form of f_tau, evaluated literally (used as a cross-check)."""
    c = _c(c)
    t = np.asarray(t, dtype=float)
    k, mu, q, lo = c.kj, c.mu, c.qbar, c.tau_lower
    first = k / mu * (1.0 - np.exp(-mu * t))
    second = k * (q * (np.exp(-mu * (t - lo)) - np.exp(-mu * t)) + mu * (np.exp(q * (t - lo)) - np.exp(-mu * t))) \
        / (mu * (mu + q))
    return _out(np.where(t <= lo, first, second))


def ratio_l(t, c):
    """f_l(t) / (1 - e^{-mu t}); equals kj/mu at t = 0."""
    c = _c(c)
    t = np.asarray(t, dtype=float)
    safe = np.where(t > 0, t, 1.0)
    return _out(np.where(t > 0, c.kj * _mix(safe, c.mu, c.qbar) / (safe * c.mu * exprel(-c.mu * safe)), c.kj / c.mu))


def ratio_tau(t, c):
    """f_tau(t) / (1 - e^{-mu t}); identically kj/mu on [0, tau_lower]."""
    c = _c(c)
    t = np.asarray(t, dtype=float)
    safe = np.maximum(t, c.tau_lower)
    tail = np.asarray(f_tau(safe, c)) / -np.expm1(-c.mu * safe)
    return _out(np.where(t <= c.tau_lower, c.kj / c.mu, tail))


@dataclass(frozen=True)
class Budget:
    B: float
    R: float


def budget_d(A: float, T: float, c) -> Budget:
    """Smallest (B, R) certified by the linear bound j <= kj ||phi|| on [0, T]."""
    c = _c(c)
    if A < 0 or T <= 0:
        raise ValueError("need A >= 0 and T > 0")
    B = A * ratio_l(T, c)
    return Budget(B, max(c.mu * B, c.kj * A * math.exp(c.qbar * T)))


def budget_e(A: float, T: float, c) -> Budget:
    """Smallest (B, R) certified by the threshold bound j <= kj phi(-tau) on [0, T]."""
    c = _c(c)
    if A < 0 or T <= 0:
        raise ValueError("need A >= 0 and T > 0")
    B = A * ratio_tau(T, c)
    return Budget(B, max(c.mu * B, c.kj * A * q_e(T - c.tau_lower, c)))


def budgets(A: float, T: float, c) -> tuple[Budget, Budget]:
    """Both budgets; with qbar > 0 and A > 0 the threshold one is strictly smaller in B."""
    c = _c(c)
    bd, be = budget_d(A, T, c), budget_e(A, T, c)
    if c.qbar > 0 and A > 0:
        assert be.B < bd.B and be.R <= bd.R, (bd, be)
    return bd, be


def _solve_ratio(fn, level: float, c: BoundConstants, t_lo: float) -> float:
    """First t > t_lo with fn(t) = level for an increasing ratio function; inf if never reached."""
    hi = max(2.0 * t_lo, 1.0)
    while fn(hi, c) < level:
        hi *= 2.0
        if hi > 1e6 or not math.isfinite(fn(hi, c)):
            return math.inf
    return brentq(lambda t: fn(t, c) - level, t_lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)


@dataclass(frozen=True)
class Horizons:
    t_d1: float
    t_d2: float
    t_e1: float
    t_e2: float

    @property
    def t_d(self) -> float:
        return min(self.t_d1, self.t_d2)

    @property
    def t_e(self) -> float:
        return min(self.t_e1, self.t_e2)

    def to_dict(self) -> dict:
        return {"t_d1": self.t_d1, "t_d2": self.t_d2, "t_e1": self.t_e1, "t_e2": self.t_e2,
                "t_d": self.t_d, "t_e": self.t_e}


def horizons(A: float, B: float, R: float, c) -> Horizons:
    """Longest invariance horizons of the linear (d) and threshold (e) budgets for fixed A, B, R."""
    c = _c(c)
    if not A > 0:
        raise ValueError("need A > 0")
    if not A * c.kj / c.mu < B:
        raise ValueError(f"need A kj / mu < B (A kj / mu = {A * c.kj / c.mu:.6g}, B = {B:.6g})")
    if not R >= c.mu * B:
        raise ValueError(f"need R >= mu B (mu B = {c.mu * B:.6g}, R = {R:.6g})")
    level = B / A
    t_d1 = _solve_ratio(ratio_l, level, c, 0.0)
    t_e1 = _solve_ratio(ratio_tau, level, c, c.tau_lower)
    if c.qbar > 0 and math.isfinite(R):
        gap = math.log(R / (A * c.kj)) / c.qbar
        t_d2, t_e2 = gap, c.tau_lower + gap
    else:
        t_d2 = t_e2 = math.inf
    out = Horizons(t_d1, t_d2, t_e1, t_e2)
    if c.qbar > 0:
        assert out.t_d < out.t_e, out
    return out


def delta_f(A: float, B: float, c, R: Optional[float] = None) -> float:
    """delta with A kj e^{qbar delta} = mu B; invariance then holds on [0, tau_lower + delta]."""
    c = _c(c)
    if not A * c.kj < c.mu * B:
        raise ValueError(f"need A kj < mu B (A kj = {A * c.kj:.6g}, mu B = {c.mu * B:.6g})")
    if R is not None and not c.mu * B <= R:
        raise ValueError(f"need mu B <= R (mu B = {c.mu * B:.6g}, R = {R:.6g})")
    if c.qbar <= 0 or A * c.kj == 0:
        return math.inf
    return math.log(c.mu * B / (A * c.kj)) / c.qbar


def w_lip_condition(A: float, R: float, T: float, c) -> bool:
    """qbar A e^{qbar T} <= R, taken literally."""
    c = _c(c)
    return c.qbar * A * math.exp(c.qbar * T) <= R


def sup_abs_q(params, B: float, n: int = 4001) -> float:
    z = np.linspace(0.0, B, n)
    return float(np.max(np.abs(params.q(z))))


def w_lip_condition_strict(A: float, R: float, T: float, B: float, params) -> bool:
    """sup_{[0,B]} |q| * A * max(1, e^{qbar T}) <= R.

    This is the hypothesis under which |w'| <= R really follows; the literal
    condition only controls q from above and misses strongly negative q.
    """
    return sup_abs_q(params, B) * A * max(1.0, math.exp(params.qbar * T)) <= R


# -- budgets and sets ----------------------------------------------------

@dataclass(frozen=True)
class CBRSet:
    B: float
    R: float
    tol: float = 1e-9

    def contains(self, chi: History) -> bool:
        v = chi.values
        return bool(np.all(v >= -self.tol) and np.all(v <= self.B * (1 + self.tol)) and lip(chi) <= self.R * (1 + self.tol))


CASES = ("linear", "threshold", "delta")


@dataclass(frozen=True)
class InvarianceBudget:
    """(A, B, R, T) for one of the invariance cases.

    ``case="delta"`` ignores T and uses tau_lower + delta.  ``w_cap`` asks
    the ensemble to also certify lip w_t <= R.
    """

    A: float
    B: float
    R: float
    T: float
    case: str = "threshold"
    w_cap: bool = False

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"case must be one of {CASES}")
        if self.A < 0 or self.B <= 0 or self.R <= 0:
            raise ValueError("need A >= 0, B > 0, R > 0")

    @classmethod
    def from_case(cls, case: str, A: float, T: float, c, w_cap: bool = False) -> "InvarianceBudget":
        bud = budget_d(A, T, c) if case == "linear" else budget_e(A, T, c)
        return cls(A, bud.B, bud.R, T, case, w_cap)

    def horizon(self, c) -> float:
        if self.case == "delta":
            return _c(c).tau_lower + delta_f(self.A, self.B, c, self.R)
        return self.T

    def conditions(self, params) -> dict:
        c = _c(params)
        A, B, R, T = self.A, self.B, self.R, self.T
        out = {}
        if self.case == "linear":
            out["bound"] = (A * ratio_l(T, c), B)
            out["lipschitz"] = (max(c.mu * B, c.kj * A * math.exp(c.qbar * T)), R)
        elif self.case == "threshold":
            out["bound"] = (A * ratio_tau(T, c), B)
            out["lipschitz"] = (max(c.mu * B, c.kj * A * q_e(T - c.tau_lower, c)), R)
        else:
            out["strict_bound"] = (A * c.kj, c.mu * B)
            out["lipschitz"] = (c.mu * B, R)
        res = {}
        for k, (lhs, rhs) in out.items():
            ok = lhs < rhs if k == "strict_bound" else lhs <= rhs
            res[k] = {"lhs": float(lhs), "rhs": float(rhs), "pass": bool(ok)}
        if self.w_cap:
            T_w = self.horizon(c)
            res["w_literal"] = {"pass": w_lip_condition(A, R, T_w, c)}
            if hasattr(params, "q"):
                res["w_strict"] = {"pass": w_lip_condition_strict(A, R, T_w, B, params)}
            else:
                res["w_strict"] = {"pass": False, "note": "needs model parameters"}
        return res

    def holds(self, params) -> bool:
        """The v-invariance conditions (the w cap is judged separately)."""
        return all(v["pass"] for k, v in self.conditions(params).items() if not k.startswith("w_"))

    def to_dict(self) -> dict:
        return {"A": self.A, "B": self.B, "R": self.R, "T": self.T, "case": self.case, "w_cap": self.w_cap}


# -- reports ---------------------------------------------------------------

@dataclass
class BoundCheck:
    name: str
    grid_size: int
    worst_margin: float
    passed: bool
    witness: Optional[dict] = None

    def to_dict(self) -> dict:
        return {"name": self.name, "grid_size": self.grid_size, "worst_margin": self.worst_margin,
                "pass": self.passed, "witness": self.witness}


@dataclass
class BoundReport:
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    precondition: Optional[dict] = None

    @property
    def all_pass(self) -> bool:
        if self.precondition is not None and not self.precondition.get("pass", True):
            return False
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> BoundCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        doc = {"checks": [c.to_dict() for c in self.checks], "all_pass": self.all_pass}
        if self.notes:
            doc["notes"] = list(self.notes)
        if self.precondition is not None:
            doc["precondition"] = self.precondition
        return doc


def _strict(name, lhs, rhs, t):
    """Check lhs > rhs with relative floor; margin is (lhs - rhs) / max(1, |lhs|)."""
    lhs, rhs = np.asarray(lhs, dtype=float), np.asarray(rhs, dtype=float)
    margin = (lhs - rhs) / np.maximum(1.0, np.abs(lhs))
    ok = (lhs - rhs) > STRICT_FLOOR * np.abs(lhs)
    k = int(np.argmin(margin)) if margin.size else 0
    wit = {"t": float(t[k]), "lhs": float(lhs[k]), "rhs": float(rhs[k])} if margin.size else None
    return BoundCheck(name, int(margin.size), float(margin[k]) if margin.size else math.inf, bool(np.all(ok)), wit)


def _increasing(name, vals, t):
    d = np.diff(vals)
    k = int(np.argmin(d)) if d.size else 0
    wit = {"t": float(t[k]), "next": float(t[k + 1])} if d.size else None
    return BoundCheck(name, int(vals.size), float(d[k]) if d.size else math.inf, bool(np.all(d > 0)), wit)


def default_grid(c, n: int = 1000) -> np.ndarray:
    c = _c(c)
    top = 20.0 * max(1.0, c.tau_lower, 1.0 / c.mu)
    if c.qbar > 0:
        top = min(top, 600.0 / c.qbar)
    return np.geomspace(T_MIN, top, n)


def envelope_peak(A: float, B: float, T: float, c, n: int = 2001) -> float:
    """max over [0, T] of mu (e^{-mu t} B + A f_l(t)) on a uniform grid including both ends."""
    c = _c(c)
    t = np.linspace(0.0, T, n)
    return float(np.max(c.mu * (np.exp(-c.mu * t) * B + A * np.asarray(f_l(t, c)))))


def bound_lemma_checks(c, grid: Optional[Sequence[float]] = None, A: Optional[float] = None,
                       B: Optional[float] = None, trajectories: Sequence = ()) -> BoundReport:
    """Grid checks of the bound inequalities and, on given trajectories, the v and |v'| bounds.

    ``trajectories`` are :class:`~sddde.integrator.Trajectory` objects.
    """
    c = _c(c)
    rep = BoundReport()
    t = np.asarray(default_grid(c) if grid is None else grid, dtype=float)
    t = t[t >= T_MIN]
    if c.qbar <= 0:
        rep.notes.append("qbar <= 0: strict bound inequalities degenerate; only non-strict forms checked")
    rl, rt = np.asarray(ratio_l(t, c)), np.asarray(ratio_tau(t, c))
    fl, ft = np.asarray(f_l(t, c)), np.asarray(f_tau(t, c))
    if c.qbar > 0:
        rep.checks.append(_strict("envelope_over_ratio_l", c.kj * np.exp(c.qbar * t) / c.mu, rl, t))
        late = t - c.tau_lower >= T_MIN
        tl = t[late]
        rep.checks.append(_strict("envelope_over_ratio_tau", c.kj * np.exp(c.qbar * (tl - c.tau_lower)),
                                  c.mu * rt[late], tl))
        rep.checks.append(_strict("f_l_over_f_tau", fl, ft, t))
        rep.checks.append(_increasing("ratio_l_increasing", rl, t))
        rep.checks.append(_increasing("ratio_tau_increasing_after_tau_lower", rt[late], tl))
    else:
        ok = bool(np.all(fl >= ft * (1 - 1e-12))) if c.qbar == 0 else True
        rep.checks.append(BoundCheck("f_l_vs_f_tau_degenerate", int(t.size), 0.0, ok))
    if c.qbar >= 0:
        rep.checks.append(_increasing("f_l_increasing", fl, t))
        rep.checks.append(_increasing("f_tau_increasing", ft, t))
    else:
        rep.notes.append("qbar < 0: f_l and f_tau peak and decay; monotonicity not checked")
    early = t <= c.tau_lower
    dev = float(np.max(np.abs(rt[early] - c.kj / c.mu))) if np.any(early) else 0.0
    rep.checks.append(BoundCheck("ratio_tau_flat", int(np.sum(early)), -dev, dev == 0.0))

    if A is not None and B is not None and c.qbar > 0:
        if A * c.kj / c.mu < B:
            t1 = _solve_ratio(ratio_l, B / A, c, 0.0)
            T = min(t1, t[-1])
            m = envelope_peak(A, B, T, c)
            err = abs(m - c.mu * B) / max(1.0, c.mu * B)
            rep.checks.append(BoundCheck("envelope_peak", 2001, PEAK_TOL - err, err <= PEAK_TOL,
                                         {"t1": t1, "max": m, "muB": c.mu * B}))
        else:
            rep.notes.append("envelope_peak skipped: A kj / mu >= B")

    for k, tr in enumerate(trajectories):
        rep.checks.extend(trajectory_bound_checks(tr, c, label=str(k)))
    return rep


def trajectory_bound_checks(tr, c=None, label: str = "0") -> list:
    """v(t) <= e^{-mu t} psi(0) + ||phi|| f_tau(t) and the |v'| bound, on the dense grid of t > 0."""
    c = _c(c or tr.params)
    seg0 = tr.segment(0.0)
    nphi = sup_norm(seg0.phi)
    psi0 = float(seg0.psi.values[-1, 0])
    g = tr.dense_grid()
    g = g[g > 0]
    _, v = tr(g)
    bound = np.exp(-c.mu * g) * psi0 + nphi * np.asarray(f_tau(g, c))
    marg = bound + TRAJ_TOL - v
    k = int(np.argmin(marg))
    out = [BoundCheck(f"v_bound[{label}]", int(g.size), float(marg[k]), bool(marg[k] >= 0),
                      {"t": float(g[k]), "v": float(v[k]), "bound": float(bound[k])})]
    _, dv = tr.derivative(g)
    dbound = np.maximum(c.kj * np.asarray(q_e(g - c.tau_lower, c)) * nphi,
                        c.mu * (abs(psi0) * np.exp(-c.mu * g) + nphi * np.asarray(f_tau(g, c))))
    marg = dbound * (1 + DV_RTOL) + TRAJ_TOL - np.abs(dv)
    k = int(np.argmin(marg))
    out.append(BoundCheck(f"dv_bound[{label}]", int(g.size), float(marg[k]), bool(marg[k] >= 0),
                          {"t": float(g[k]), "dv": float(dv[k]), "bound": float(dbound[k])}))
    return out


# -- ensemble verification -------------------------------------------------

def ensemble_pairs(h: float, A: float, B: float, R: float, size: int, seed, m: int = 17) -> list:
    """Extreme members first (constants at the corners, steepest ramps), then random members."""
    R_phi = R
    t = np.linspace(-h, 0.0, m)
    ramp_up = np.clip(B + R * t, 0.0, B)           # rises to B at 0 with slope R
    ramp_dn = np.clip(-R * t, 0.0, B)              # falls to 0 at 0 with slope R
    extremes = [
        HistoryPair.constant(h, 0.0, 0.0),
        HistoryPair.constant(h, A, B),
        HistoryPair.constant(h, A, 0.0),
        HistoryPair.constant(h, 0.0, B),
        HistoryPair(History.constant(h, A), History(h, t, ramp_up)),
        HistoryPair(History.constant(h, A), History(h, t, ramp_dn)),
    ]
    members = extremes[:size]
    ss = np.random.SeedSequence(seed)
    for child in ss.spawn(max(size - len(members), 0)):
        a, b = child.spawn(2)
        members.append(HistoryPair(random_lipschitz(a, h, 1, A, R_phi, m), random_lipschitz(b, h, 1, B, R, m)))
    return members


def _run_member(params, pair, T, config, budget: InvarianceBudget, check_w: bool):
    from .integrator import integrate

    tr = integrate(params, pair, T, config)
    B, R = budget.B, budget.R
    g = tr.dense_grid()
    w, v = tr(g)
    vmax = max(float(np.max(v)), float(np.max(tr.V)))
    vmin = min(float(np.min(v)), float(np.min(tr.V)))
    _, dvmax = tr.max_abs_derivative(0.0, T)
    lip_v = max(lip(pair.psi), dvmax)
    res = {
        "v_upper": B * (1 + SLACK) - vmax,
        "v_lower": vmin + 1e-9,
        "v_lip": R * (1 + SLACK) - lip_v,
    }
    if check_w:
        dwmax, _ = tr.max_abs_derivative(0.0, T)
        res["w_lip"] = R * (1 + SLACK) - max(lip(pair.phi), dwmax)
    return res


def verify_invariance(params, budget: InvarianceBudget, ensemble_size: int = 200, seed=0,
                      config=None) -> BoundReport:
    """Integrate an ensemble with ||phi|| <= A, psi in C_{B,R} and check v_t in C_{B,R} on [0, T].

    Worst margins are reported per check; a negative margin is a violation.
    If the budget's own conditions fail, nothing is integrated.
    """
    rep = BoundReport()
    cond = budget.conditions(params)
    ok = all(v["pass"] for k, v in cond.items() if not k.startswith("w_"))
    rep.precondition = {"pass": ok, "conditions": cond, "budget": budget.to_dict()}
    if not ok:
        rep.notes.append("budget conditions fail; ensemble not run")
        return rep
    T = budget.horizon(params)
    if not math.isfinite(T):
        rep.precondition["pass"] = False
        rep.notes.append("unbounded horizon; choose a finite T")
        return rep
    w_mode = None
    if budget.w_cap:
        if cond["w_strict"]["pass"]:
            w_mode = "gated"
        elif cond["w_literal"]["pass"]:
            w_mode = "advisory"
            rep.notes.append("w cap: literal condition holds but sup |q| on [0, B] exceeds qbar; reported, not gated")
        else:
            rep.notes.append("w cap: condition fails; not checked")
    pairs = ensemble_pairs(params.h, budget.A, budget.B, budget.R, ensemble_size, seed)
    results = pmap(lambda p: _run_member(params, p, T, config, budget, w_mode is not None), pairs)
    for key in results[0]:
        vals = np.array([r[key] for r in results])
        k = int(np.argmin(vals))
        check = BoundCheck(key, len(results), float(vals[k]), bool(vals[k] >= 0),
                           {"member": k, "seed": str(seed), "T": T})
        if key == "w_lip" and w_mode == "advisory":
            rep.notes.append({"advisory": check.to_dict()})
        else:
            rep.checks.append(check)
    return rep
