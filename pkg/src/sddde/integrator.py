"""Method-of-steps integration of the (w, v) system and the semiflow S(t, .)."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .histories import History, HistoryPair, MERGE_TOL
from .model import ModelParams, rhs_full

POSITIVITY_TOL = 1e-9

_STATUS = {
    K.HISTORY_EXHAUSTED: "history exhausted before the threshold was reached",
    K.NOT_REACHED: "threshold not reached within h; g violates (G)",
    K.NEGATIVE_STATE: "state left the nonnegative cone",
    K.NONFINITE: "non-finite state",
}

# extra splits allowed per tracked break before the node arrays are regrown
_SPLITS_PER_BREAK = 4


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Outer step, corrector sweeps and tolerances.

    ``step=None`` picks the largest divisor of h not exceeding min(tau_lower, h) / 8.
    ``nodes_per_step`` is the number of stored node intervals per step; the
    interior ones come from the step's Hermite cubic.
    """

    step: Optional[float] = None
    corrector_passes: int = 1
    root_tol: float = 1e-12
    residual_tol: float = 1e-9
    inner_step: Optional[float] = None
    nodes_per_step: int = 8

    def __post_init__(self):
        if self.corrector_passes < 0:
            raise ValueError("corrector_passes must be >= 0")
        if self.nodes_per_step < 1:
            raise ValueError("nodes_per_step must be >= 1")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")

    def resolve_step(self, params: ModelParams) -> float:
        if self.step is None:
            base = min(params.tau_lower, params.h) / 8.0
            return params.h / math.ceil(params.h / base - 1e-9)
        if self.step > params.tau_lower * (1 + 1e-12):
            raise ValueError(f"step {self.step} exceeds tau_lower {params.tau_lower}; delayed values would be unknown")
        return self.step

    def resolve_inner(self, params: ModelParams) -> float:
        return self.inner_step or params.field.default_inner_step


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Solution on [-h, t_end].

    Nodes ``times[:n0]`` are the initial history (last at t = 0); later nodes
    are step ends plus interior Hermite nodes.  The solver reads delayed values from the linear
    interpolant of the nodes; :meth:`__call__` gives the cubic Hermite dense
    output built from node values and node derivatives.
    """

    params: ModelParams
    h: float
    step: float
    times: np.ndarray
    W: np.ndarray
    V: np.ndarray
    DW: np.ndarray
    DV: np.ndarray
    TAU: np.ndarray
    n0: int
    breaks: np.ndarray

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def forward_times(self) -> np.ndarray:
        return self.times[self.n0 - 1:]

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -self.h - 1e-12) or np.any(t > self.t_end + 1e-12):
            raise ValueError(f"time outside [-{self.h}, {self.t_end}]")
        return np.clip(t, -self.h, self.t_end)

    def linear(self, t):
        """Node interpolant (the representation the solver itself uses)."""
        t = self._check(t)
        return np.interp(t, self.times, self.W), np.interp(t, self.times, self.V)

    def _hermite(self, t, deriv=False):
        st = self.forward_times
        k = np.clip(np.searchsorted(st, t, side="right") - 1, 0, len(st) - 2)
        i = k + self.n0 - 1
        H = self.times[i + 1] - self.times[i]
        u = (t - self.times[i]) / H
        out = []
        for X, D in ((self.W, self.DW), (self.V, self.DV)):
            fn = K.hermite_slope if deriv else K.hermite
            out.append(np.array([fn(X[a], D[a], X[a + 1], D[a + 1], Hh, uu) for a, Hh, uu in
                                 zip(np.atleast_1d(i), np.atleast_1d(H), np.atleast_1d(u))]))
        return out

    def __call__(self, t):
        t = self._check(t)
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(t)
        w, v = np.interp(t, self.times, self.W), np.interp(t, self.times, self.V)
        pos = t > 0
        if np.any(pos) and len(self.forward_times) > 1:
            hw, hv = self._hermite(t[pos])
            w[pos], v[pos] = hw, hv
        return (float(w[0]), float(v[0])) if scalar else (w, v)

    def derivative(self, t):
        t = np.atleast_1d(self._check(t))
        if np.any(t < 0):
            raise ValueError("dense derivative only available for t >= 0")
        return self._hermite(t, deriv=True)

    def segment(self, t: float) -> HistoryPair:
        """x_t shifted to [-h, 0]; at t = 0 this is the initial pair node for node.

        The segment inherits the run's tracked breaks that fall in its window,
        so continuing from it repeats the original step sequence.
        """
        t = float(self._check(t))
        lo = t - self.h
        tol = MERGE_TOL * max(1.0, self.h)
        inside = (self.times > lo + tol) & (self.times < t - tol)
        nodes = np.concatenate([[lo], self.times[inside], [t]])
        w = np.interp(nodes, self.times, self.W)
        v = np.interp(nodes, self.times, self.V)
        rel = nodes - t
        rel[0], rel[-1] = -self.h, 0.0
        kept = self.breaks[(self.breaks >= lo - tol) & (self.breaks <= t + tol)] - t
        kept = np.clip(kept, -self.h, 0.0)
        return HistoryPair(History(self.h, rel, w), History(self.h, rel.copy(), v), breaks=tuple(kept))

    def max_abs_derivative(self, t0: float, t1: float) -> tuple[float, float]:
        """Exact max of |H'| of the Hermite pieces meeting [t0, t1] (t0 >= 0), per component."""
        out = []
        st = self.forward_times
        k0 = max(int(np.searchsorted(st, t0, side="right")) - 1, 0)
        k1 = min(int(np.searchsorted(st, t1, side="left")), len(st) - 1)
        for X, D in ((self.W, self.DW), (self.V, self.DV)):
            best = 0.0
            for k in range(k0, k1):
                i = k + self.n0 - 1
                H = self.times[i + 1] - self.times[i]
                cands = [0.0, 1.0]
                # H'(u) is quadratic in u; its vertex is the only interior candidate
                a = 3 * (2 * X[i] + H * D[i] - 2 * X[i + 1] + H * D[i + 1])
                bq = 2 * (-3 * X[i] - 2 * H * D[i] + 3 * X[i + 1] - H * D[i + 1])
                if a != 0.0:
                    uv = -bq / (2 * a)
                    if 0.0 < uv < 1.0:
                        cands.append(uv)
                for u in cands:
                    best = max(best, abs(K.hermite_slope(X[i], D[i], X[i + 1], D[i + 1], H, u)))
            out.append(best)
        return out[0], out[1]

    def dense_grid(self, per_step: int = 8) -> np.ndarray:
        st = self.forward_times
        if len(st) < 2:
            return st.copy()
        fr = np.linspace(0.0, 1.0, per_step, endpoint=False)
        g = (st[:-1, None] + np.diff(st)[:, None] * fr[None, :]).ravel()
        return np.concatenate([g, st[-1:]])

    def min_state(self) -> float:
        g = self.dense_grid()
        w, v = self(g)
        return float(min(np.min(w), np.min(v), np.min(self.W), np.min(self.V)))

    def sample(self, output_dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = int(round(self.t_end / output_dt))
        t = np.linspace(0.0, n * output_dt, n + 1)
        t = t[t <= self.t_end + 1e-12]
        w, v = self(t)
        return t, np.atleast_1d(w), np.atleast_1d(v)

    def tau_at(self, t):
        """Delay tau(v_t), interpolated between step nodes."""
        st, tau = self.forward_times, self.TAU[self.n0 - 1:]
        ok = np.isfinite(tau)
        return np.interp(t, st[ok], tau[ok])


def integrate(params: ModelParams, pair: HistoryPair, T: float, config: Optional[SolverConfig] = None) -> Trajectory:
    """Solve the SD-DDE through ``pair`` on [0, T] by fixed-step RK4 over the method of steps."""
    config = config or SolverConfig()
    if T < 0:
        raise ValueError("T must be nonnegative")
    if abs(pair.h - params.h) > 1e-12 * max(1.0, params.h):
        raise ValueError(f"initial pair has h={pair.h}, model has h={params.h}")
    if np.min(pair.phi.values) < 0 or np.min(pair.psi.values) < 0:
        raise ValueError("initial pair must be nonnegative")
    dt = config.resolve_step(params)
    hmax = config.resolve_inner(params)
    n0 = len(pair.times)
    nsteps = int(math.ceil(T / dt - 1e-9)) if T > 0 else 0
    sub = config.nodes_per_step
    breaks = pair.break_times()
    extra = _SPLITS_PER_BREAK * len(breaks) + 8
    while True:
        size = n0 + sub * (nsteps + extra) + 8
        times = np.zeros(size)
        W, V = np.zeros(size), np.zeros(size)
        DW, DV, TAU = np.full(size, np.nan), np.full(size, np.nan), np.full(size, np.nan)
        times[:n0] = pair.times
        W[:n0] = pair.phi.values[:, 0]
        V[:n0] = pair.psi.values[:, 0]
        status, last = K.integrate_core(params.pack, times, W, V, DW, DV, TAU, n0, nsteps, dt, float(T),
                                        config.corrector_passes, sub, breaks, params.h, hmax, POSITIVITY_TOL)
        if status != K.CAPACITY:
            break
        extra *= 4
    if status != K.OK:
        raise IntegrationError(f"{_STATUS.get(status, status)} at t={times[last]:.6g}")
    n = last + 1
    return Trajectory(params, params.h, dt, times[:n].copy(), W[:n].copy(), V[:n].copy(),
                      DW[:n].copy(), DV[:n].copy(), TAU[:n].copy(), n0, breaks)


def semiflow(params: ModelParams, pair: HistoryPair, t: float, config: Optional[SolverConfig] = None) -> HistoryPair:
    """S(t, pair) = x_t."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return pair
    return integrate(params, pair, t, config).segment(t)


@dataclass(frozen=True)
class EquilibriumCandidate:
    w: float
    v: float
    residual: float
    variation: float


def detect_equilibrium(traj: Trajectory, window: Optional[float] = None,
                       tol: Optional[float] = None) -> Optional[EquilibriumCandidate]:
    """Trailing-window total variation test; returns the window mean and its RHS residual."""
    window = 2.0 * traj.h if window is None else window
    if traj.t_end < 2.0 * window:
        raise ValueError("trajectory must cover at least two windows")
    sel = traj.times >= traj.t_end - window - 1e-12
    w, v = traj.W[sel], traj.V[sel]
    variation = float(np.sum(np.abs(np.diff(w))) + np.sum(np.abs(np.diff(v))))
    scale = max(np.max(np.abs(w)), np.max(np.abs(v)))
    tol = 1e-8 * (1.0 + scale) if tol is None else tol
    if variation > tol:
        return None
    wm, vm = float(np.mean(w)), float(np.mean(v))
    h = traj.h
    fw, fv = rhs_full(traj.params, History.constant(h, wm), History.constant(h, vm))
    return EquilibriumCandidate(wm, vm, float(max(abs(fw), abs(fv))), variation)


@dataclass(frozen=True)
class ConvergenceResult:
    steps: tuple
    errors: tuple
    orders: tuple
    order: float


def convergence_order(params: ModelParams, pair: HistoryPair, T: float, steps: Optional[Sequence[float]] = None,
                      config: Optional[SolverConfig] = None) -> ConvergenceResult:
    """Observed order from endpoint errors at three steps against a finer reference.

    Default steps are Delta, Delta/2, Delta/4 with reference Delta/8.
    """
    config = config or SolverConfig()
    if steps is None:
        base = config.resolve_step(params)
        steps = [base, base / 2, base / 4]
        ref = base / 8
    else:
        steps = sorted(set(float(s) for s in steps), reverse=True)
        ref = steps[-1] / 2
    if len(steps) < 3:
        raise ValueError("need three distinct steps coarser than the reference")

    def endpoint(dt):
        cfg = dataclasses.replace(config, step=dt)
        tr = integrate(params, pair, T, cfg)
        return np.array([tr.W[-1], tr.V[-1]])

    xref = endpoint(ref)
    errs = [float(np.max(np.abs(endpoint(s) - xref))) for s in steps]
    orders = tuple(math.log(errs[k] / errs[k + 1]) / math.log(steps[k] / steps[k + 1]) for k in range(len(steps) - 1))
    slope = float(np.polyfit(np.log(steps), np.log(errs), 1)[0])
    return ConvergenceResult(tuple(steps), tuple(errs), orders, slope)
