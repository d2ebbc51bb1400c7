"""The maturation ODE and its threshold time.

For a history psi of the mature population, maturity runs down from x2,

    y'(s) = -g(y(s), psi(-s)),   y(0) = x2,

and the delay tau(psi) is the first s with y(s) = x1.  The decreasing sign
is the one that carries y from x2 to x1 < x2 when g >= eps > 0; see
README "Sign convention".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .histories import History
from .ingredients import DeathRate, GFamily

RESIDUAL_TOL = 1e-9


class ThresholdError(RuntimeError):
    """The threshold x1 was not reached inside [0, h], or the path left the ball."""


@dataclass(frozen=True)
class MaturationField:
    """g together with the constants of condition (G)."""

    x1: float
    x2: float
    b: float
    K: float
    eps: float
    g_family: GFamily = field(default_factory=lambda: GFamily.const(1.0))

    def __post_init__(self):
        if not self.x1 < self.x2:
            raise ValueError("need x1 < x2")
        if not 0 < self.eps < self.K:
            raise ValueError("need 0 < eps < K")
        if self.b <= 0:
            raise ValueError("need b > 0")

    @property
    def h(self) -> float:
        return self.b / self.K

    @property
    def tau_lower(self) -> float:
        return (self.x2 - self.x1) / self.K

    @property
    def default_inner_step(self) -> float:
        return min(self.h, self.tau_lower) / 64.0

    def write(self, P: np.ndarray) -> None:
        P[K.X1], P[K.X2], P[K.BALL], P[K.KBIG], P[K.EPS] = self.x1, self.x2, self.b, self.K, self.eps
        self.g_family.write(P)

    def pack(self, death: Optional[DeathRate] = None) -> np.ndarray:
        P = np.zeros(K.PACK_SIZE)
        self.write(P)
        (death or DeathRate()).write(P)
        return P

    def g(self, y, z):
        return _grid(self.pack(), 0, y, z)

    def D1g(self, y, z):
        return _grid(self.pack(), 1, y, z)

    def to_dict(self) -> dict:
        return {"x1": self.x1, "x2": self.x2, "b": self.b, "K": self.K, "eps": self.eps,
                "g": self.g_family.to_dict()}


def _grid(P, which, y, z):
    fn = K.g_eval if which == 0 else K.d1g_eval
    out = np.vectorize(lambda a, b: fn(P, a, b), otypes=[float])(y, z)
    return float(out) if out.ndim == 0 else out


@dataclass
class ConditionResult:
    name: str
    passed: bool
    value: float
    bound: float
    witness: Optional[tuple] = None

    def to_dict(self) -> dict:
        return {"name": self.name, "pass": self.passed, "value": self.value,
                "bound": self.bound, "witness": self.witness}


@dataclass
class GValidation:
    conditions: list
    z_max: float

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.conditions)

    def __getitem__(self, name: str) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"conditions": [c.to_dict() for c in self.conditions], "z_max": self.z_max,
                "all_pass": self.all_pass}


def validate_G(field: MaturationField, psi_max: float = 1.0, ny: int = 101, nz: int = 121,
               z_max: Optional[float] = None, fd_rel_tol: float = 1e-6) -> GValidation:
    """Check (G1)-(G3) on a finite grid of the ball around x2 times [0, z_max].

    (G1) is only checkable as finiteness of difference quotients in z on the
    grid window; the default window is ``10 * psi_max + 10``.
    """
    if z_max is None:
        z_max = 10.0 * psi_max + 10.0
    P = field.pack()
    Y = np.linspace(field.x2 - field.b, field.x2 + field.b, ny)
    Z = np.unique(np.concatenate([np.linspace(0.0, min(z_max, 2.0), nz // 2),
                                  np.geomspace(1e-3, z_max, nz - nz // 2)]))
    G = K.grid_eval(P, 0, Y, Z)
    D = K.grid_eval(P, 1, Y, Z)
    out = []

    quot = np.abs(np.diff(G, axis=1)) / np.diff(Z)[None, :]
    qmax = float(np.max(quot)) if quot.size else 0.0
    a, b = np.unravel_index(int(np.argmax(quot)), quot.shape)
    out.append(ConditionResult("G1", bool(np.isfinite(qmax)), qmax, float("inf"), (float(Y[a]), float(Z[b]))))

    bound = field.K / field.b
    a, b = np.unravel_index(int(np.argmax(np.abs(D))), D.shape)
    dmax = float(np.abs(D[a, b]))
    out.append(ConditionResult("G2", dmax < bound, dmax, bound, (float(Y[a]), float(Z[b]))))

    delta = 1e-5 * max(1.0, field.b)
    fd = (K.grid_eval(P, 0, Y + delta, Z) - K.grid_eval(P, 0, Y - delta, Z)) / (2 * delta)
    err = np.abs(fd - D) / np.maximum(1.0, np.abs(D))
    a, b = np.unravel_index(int(np.argmax(err)), err.shape)
    out.append(ConditionResult("D1g_consistency", float(err[a, b]) <= fd_rel_tol, float(err[a, b]), fd_rel_tol,
                               (float(Y[a]), float(Z[b]))))

    lo_idx = np.unravel_index(int(np.argmin(G)), G.shape)
    hi_idx = np.unravel_index(int(np.argmax(G)), G.shape)
    gmin, gmax = float(G[lo_idx]), float(G[hi_idx])
    out.append(ConditionResult("G3_lower", gmin >= field.eps, gmin, field.eps, (float(Y[lo_idx[0]]), float(Z[lo_idx[1]]))))
    out.append(ConditionResult("G3_upper", gmax <= field.K, gmax, field.K, (float(Y[hi_idx[0]]), float(Z[hi_idx[1]]))))
    gap, gap_bound = field.x2 - field.x1, field.b / field.K * field.eps
    out.append(ConditionResult("G3_gap", 0 < gap < gap_bound, gap, gap_bound))
    return GValidation(out, float(z_max))


@dataclass(frozen=True)
class ThresholdResult:
    tau: float
    residual: float
    exponent_integral: Optional[float]
    s_nodes: np.ndarray
    y_nodes: np.ndarray
    dy_nodes: np.ndarray

    def y_path(self, s):
        """Cubic Hermite dense output of y on [0, tau]."""
        s = np.asarray(s, dtype=float)
        k = np.clip(np.searchsorted(self.s_nodes, s, side="right") - 1, 0, len(self.s_nodes) - 2)
        H = self.s_nodes[k + 1] - self.s_nodes[k]
        u = (s - self.s_nodes[k]) / H
        y0, y1 = self.y_nodes[k], self.y_nodes[k + 1]
        f0, f1 = self.dy_nodes[k], self.dy_nodes[k + 1]
        u2, u3 = u * u, u * u * u
        return ((2 * u3 - 3 * u2 + 1) * y0 + (u3 - 2 * u2 + u) * H * f0
                + (-2 * u3 + 3 * u2) * y1 + (u3 - u2) * H * f1)

    def to_dict(self) -> dict:
        return {"tau": self.tau, "residual": self.residual, "exponent_integral": self.exponent_integral,
                "y_nodes": [[float(s), float(y)] for s, y in zip(self.s_nodes, self.y_nodes)]}


def solve_maturation(field: MaturationField, psi: History, with_exponent: Optional[DeathRate] = None,
                     inner_step: Optional[float] = None) -> ThresholdResult:
    """Solve the maturation ODE driven by ``psi`` and locate the threshold time.

    With ``with_exponent`` the accumulator of [d - D1g](y(s), psi(-s)) is
    integrated alongside y and reported at tau.
    """
    if psi.d != 1:
        raise ValueError("psi must be scalar")
    h = field.h
    if psi.h < h - 1e-12:
        raise ValueError(f"psi must be defined on [-{h}, 0]")
    hmax = inner_step or field.default_inner_step
    P = field.pack(with_exponent)
    times, vals = psi.times, np.ascontiguousarray(psi.values[:, 0])
    cap = int(np.ceil(h / hmax)) + len(times) + 8
    path = np.zeros((cap, 4))
    tau, E, res, npath, status = K.threshold_core(P, times, vals, len(times), 0.0, h, hmax, path, True)
    if status != K.OK:
        raise ThresholdError(f"threshold x1={field.x1} not reached within h={h} (status {status}); "
                             "g violates (G) on this history")
    path = path[:npath]
    lo, hi = field.x2 - field.b, field.x2 + field.b
    if np.any(path[:, 1] < lo - 1e-12) or np.any(path[:, 1] > hi + 1e-12):
        raise ThresholdError("maturation path left the closed ball around x2")
    if res > RESIDUAL_TOL:
        raise ThresholdError(f"threshold residual {res} exceeds {RESIDUAL_TOL}")
    return ThresholdResult(float(tau), float(res), float(E) if with_exponent is not None else None,
                           path[:, 0].copy(), path[:, 1].copy(), path[:, 2].copy())


def tau_bounds(field: MaturationField) -> tuple[float, float]:
    gap = field.x2 - field.x1
    return gap / field.K, gap / field.eps
