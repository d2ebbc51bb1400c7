"""Stem-cell model ingredients, the delayed production functional j and the full RHS."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import _kernels as K
from .histories import History, HistoryPair, random_lipschitz, sup_norm
from .ingredients import DeathRate, GFamily, Profile
from .retraction import DomainSpec, retract
from .threshold import MaturationField, ThresholdError

NONNEG_TOL = 1e-12


@dataclass(frozen=True)
class IngredientSet:
    """Division/renewal parameters of the stem cells and the progenitor death rate."""

    a_w: float = 0.7
    p_w: float = 1.0
    mu_w: float = 0.1
    k_a: float = 1.0
    k_p: float = 0.0
    death: DeathRate = field(default_factory=DeathRate)

    def __post_init__(self):
        if not 0.0 <= self.a_w <= 1.0:
            raise ValueError("a_w must lie in [0, 1]")
        for name in ("p_w", "mu_w", "k_a", "k_p"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def write(self, P: np.ndarray) -> None:
        P[K.AW], P[K.PW], P[K.MUW], P[K.KA], P[K.KP] = self.a_w, self.p_w, self.mu_w, self.k_a, self.k_p
        self.death.write(P)

    def q_tail(self) -> float:
        s_inf = 0.0 if self.k_a > 0 else self.a_w
        d_inf = 0.0 if self.k_p > 0 else self.p_w
        return (2.0 * s_inf - 1.0) * d_inf - self.mu_w

    def gamma_tail(self) -> float:
        s_inf = 0.0 if self.k_a > 0 else self.a_w
        d_inf = 0.0 if self.k_p > 0 else self.p_w
        return 2.0 * (1.0 - s_inf) * d_inf


def _sup_on_halfline(fn: Callable[[np.ndarray], np.ndarray], tail: float, z_cap: float) -> float:
    """sup of fn on [0, inf): dense grid on [0, z_cap], local refinement, and the z -> inf limit."""
    z = np.unique(np.concatenate([np.linspace(0.0, 1.0, 401), np.geomspace(1e-4, z_cap, 801)]))
    vals = fn(z)
    k = int(np.argmax(vals))
    best = float(vals[k])
    lo, hi = z[max(k - 1, 0)], z[min(k + 1, len(z) - 1)]
    if hi > lo:
        res = minimize_scalar(lambda x: -float(fn(np.array([x]))[0]), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        best = max(best, -float(res.fun))
    return max(best, tail)


@dataclass(frozen=True)
class ModelParams:
    ingredients: IngredientSet
    field: MaturationField
    mu: float
    z_cap: float = 1e3

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")

    @cached_property
    def pack(self) -> np.ndarray:
        P = np.zeros(K.PACK_SIZE)
        self.field.write(P)
        self.ingredients.write(P)
        P[K.MU] = self.mu
        P.setflags(write=False)
        return P

    @property
    def h(self) -> float:
        return self.field.h

    @property
    def tau_lower(self) -> float:
        return self.field.tau_lower

    @cached_property
    def qbar(self) -> float:
        return qbar(self)

    @cached_property
    def sup_gamma(self) -> float:
        return _sup_on_halfline(lambda z: K.z_eval(self.pack, 1, z), self.ingredients.gamma_tail(), self.z_cap)

    @cached_property
    def sup_abs_d(self) -> float:
        # d is monotone in z for fixed y, so the extremes sit at z = 0 and z -> inf
        f = self.field
        y = np.linspace(f.x2 - f.b, f.x2 + f.b, 4001)
        at0 = K.grid_eval(self.pack, 2, y, np.array([0.0]))[:, 0]
        atcap = K.grid_eval(self.pack, 2, y, np.array([self.z_cap]))[:, 0]
        tail = self.ingredients.death.tail(y)
        return float(max(np.max(np.abs(at0)), np.max(np.abs(atcap)), np.max(np.abs(tail))))

    @cached_property
    def kj(self) -> float:
        return kj_formula(self.field.K, self.field.eps, self.field.b, self.sup_abs_d, self.sup_gamma)

    def q(self, z):
        return _zfun(self.pack, 0, z)

    def gamma(self, z):
        return _zfun(self.pack, 1, z)

    def d(self, y, z):
        return d_rate(self, y, z)

    def to_dict(self) -> dict:
        ing = self.ingredients
        return {
            "a_w": ing.a_w, "p_w": ing.p_w, "mu_w": ing.mu_w, "k_a": ing.k_a, "k_p": ing.k_p,
            "k_d": ing.death.k_d, "alpha_spec": ing.death.alpha.to_dict(), "mu_u_spec": ing.death.mu_u.to_dict(),
            "mu": self.mu, **{k: v for k, v in self.field.to_dict().items() if k != "g"},
            "g_family": self.field.g_family.kind, "g_params": self.field.g_family.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        gp = dict(doc.get("g_params", {}))
        gp["kind"] = doc.get("g_family", gp.get("kind", "const"))
        field_ = MaturationField(float(doc["x1"]), float(doc["x2"]), float(doc["b"]), float(doc["K"]),
                                 float(doc["eps"]), GFamily.from_spec(gp))
        death = DeathRate(Profile.from_spec(doc.get("alpha_spec", 0.0)), Profile.from_spec(doc.get("mu_u_spec", 0.0)),
                          float(doc.get("k_d", 0.0)))
        ing = IngredientSet(float(doc["a_w"]), float(doc["p_w"]), float(doc["mu_w"]), float(doc["k_a"]),
                            float(doc["k_p"]), death)
        return cls(ing, field_, float(doc["mu"]), float(doc.get("z_cap", 1e3)))


def _zfun(P, which, z):
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    out = K.z_eval(P, which, np.ascontiguousarray(z_arr.ravel())).reshape(z_arr.shape)
    return float(out[0]) if np.ndim(z) == 0 else out


def q_rate(params: ModelParams, z):
    return params.q(z)


def gamma_rate(params: ModelParams, z):
    return params.gamma(z)


def d_rate(params: ModelParams, y, z):
    f = params.field
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < f.x2 - f.b - 1e-12) or np.any(y_arr > f.x2 + f.b + 1e-12):
        raise ValueError("y outside the closed ball around x2")
    out = np.vectorize(lambda a, b: K.d_eval(params.pack, a, b), otypes=[float])(y, z)
    return float(out) if out.ndim == 0 else out


def qbar(params: ModelParams) -> float:
    """sup of q over [0, inf)."""
    return _sup_on_halfline(lambda z: K.z_eval(params.pack, 0, z), params.ingredients.q_tail(), params.z_cap)


def kj_formula(K_: float, eps: float, b: float, sup_abs_d: float, sup_gamma: float) -> float:
    h = b / K_
    return K_ / eps * math.exp((K_ / b + sup_abs_d) * h) * sup_gamma


def kj_bound(params: ModelParams) -> float:
    return params.kj


def default_params() -> ModelParams:
    """A (G)-valid configuration from the example families: g = eps_g + exp(-z) gamma_g(y)."""
    field_ = MaturationField(
        x1=0.5, x2=1.0, b=2.0, K=2.0, eps=0.8,
        g_family=GFamily.exp(0.8, Profile("affine", (0.5, 0.15, 1.0)), rate=1.0),
    )
    death = DeathRate(Profile.const(0.2), Profile.const(0.1), k_d=1.0)
    ing = IngredientSet(a_w=0.7, p_w=1.0, mu_w=0.1, k_a=1.0, k_p=0.0, death=death)
    return ModelParams(ing, field_, mu=1.0)


# -- the functional j and the full right-hand side ------------------------

def _pair_arrays(params: ModelParams, phi: History, psi: History):
    pair = HistoryPair(phi, psi)
    if pair.h < params.h - 1e-12:
        raise ValueError(f"histories must be defined on [-{params.h}, 0]")
    if np.min(pair.phi.values) < -NONNEG_TOL or np.min(pair.psi.values) < -NONNEG_TOL:
        raise ValueError("(phi, psi) must lie in the nonnegative cone")
    times = np.ascontiguousarray(pair.times)
    return times, np.ascontiguousarray(pair.phi.values[:, 0]), np.ascontiguousarray(pair.psi.values[:, 0])


def _eval(params: ModelParams, phi: History, psi: History, inner_step=None):
    times, W, V = _pair_arrays(params, phi, psi)
    hmax = inner_step or params.field.default_inner_step
    fw, fv, tau, st = K.rhs_core(params.pack, times, W, V, len(times), params.h, hmax)
    if st != K.OK:
        raise ThresholdError(f"threshold solve failed (status {st})")
    j = fv + params.mu * V[-1]
    return fw, fv, tau, j


def rhs_j(params: ModelParams, phi: History, psi: History, inner_step=None) -> float:
    """j(phi, psi) with tau and the exponent integral from the threshold solve."""
    times, W, V = _pair_arrays(params, phi, psi)
    hmax = inner_step or params.field.default_inner_step
    dummy = np.empty((1, 4))
    tau, E, res, _, st = K.threshold_core(params.pack, times, V, len(times), 0.0, params.h, hmax, dummy, False)
    if st != K.OK:
        raise ThresholdError(f"threshold solve failed (status {st})")
    vd = K.interp(times, V, len(times), -tau)
    wd = K.interp(times, W, len(times), -tau)
    f = params.field
    j = (params.gamma(vd) / f.g(f.x1, vd)) * f.g(f.x2, V[-1]) * wd * math.exp(E)
    assert j >= 0.0, f"negative production {j}"
    return float(j)


def delay(params: ModelParams, psi: History, inner_step=None) -> float:
    """tau(psi) under the model's maturation field."""
    phi = History(psi.h, psi.times, np.zeros_like(psi.values))
    return float(_eval(params, phi, psi, inner_step)[2])


def rhs_full(params: ModelParams, phi: History, psi: History, inner_step=None) -> tuple[float, float]:
    """(q(psi(0)) phi(0), -mu psi(0) + j(phi, psi))."""
    fw, fv, _, j = _eval(params, phi, psi, inner_step)
    assert j >= -1e-12 * max(1.0, abs(fv)), f"negative production {j}"
    return float(fw), float(fv)


def rhs_stacked(params: ModelParams) -> Callable[[History], np.ndarray]:
    """Adapter: the RHS as a functional of a two-component history (for the feedback check)."""
    def f(x: History) -> np.ndarray:
        pair = HistoryPair.from_stacked(x)
        return np.array(rhs_full(params, pair.phi, pair.psi))
    return f


def equilibrium(params: ModelParams) -> Optional[tuple[float, float]]:
    """Positive equilibrium (w*, v*): q(v*) = 0 and mu v* = j(w*, v*), if q changes sign.

    j is linear in phi, so w* = mu v* / j(1, v*).
    """
    q0, qcap = params.q(0.0), params.q(params.z_cap)
    if not (q0 > 0 > qcap):
        return None
    v_star = brentq(lambda z: params.q(z), 0.0, params.z_cap, xtol=1e-14, rtol=1e-14)
    h = params.h
    j1 = rhs_j(params, History.constant(h, 1.0), History.constant(h, v_star))
    if j1 <= 0:
        return None
    return params.mu * v_star / j1, v_star


def estimate_local_lipschitz(functional: Callable[[History], float], phi0: History, delta: float, R: float,
                             n_samples: int = 200, seed=0, domain: Optional[DomainSpec] = None) -> float:
    """Largest observed |f(a) - f(b)| / ||a - b|| over random pairs in V(phi0; delta, R), retracted into D."""
    from .histories import lip

    if delta <= 0:
        raise ValueError("delta must be positive")
    room = R - lip(phi0)
    if room < 0:
        raise ValueError("R must be at least lip(phi0)")
    domain = domain or DomainSpec(0.0, phi0.d)
    rng = np.random.default_rng(seed)
    h = phi0.h

    def draw():
        u = random_lipschitz(rng.integers(2**63), h, phi0.d, 2.0, room / delta, m=9) - 1.0
        scale = rng.uniform(0.05, 1.0) * delta
        return retract(phi0 + u * scale, domain)

    best = 0.0
    for _ in range(n_samples):
        a, b = draw(), draw()
        dist = sup_norm(a - b)
        if dist <= 0:
            continue
        best = max(best, abs(functional(a) - functional(b)) / dist)
    return best
