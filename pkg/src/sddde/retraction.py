"""Retraction of C([-h,0], R^n) onto D = C([-h,0], [-B, inf)^n) and the feedback check."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .histories import History

FEEDBACK_TOL = 1e-10


@dataclass(frozen=True)
class DomainSpec:
    B: float = 0.0
    n: int = 2

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")

    def contains(self, phi: History) -> bool:
        return bool(np.all(phi.values >= -self.B))


def clamp_scalar(u: float, B: float) -> float:
    return u if u >= -B else -B


def _crossing_time(t0, t1, v0, v1, lower):
    """Time where the chord crosses ``lower``, nudged so the kept piece is not steeper than the chord."""
    tc = t0 + (lower - v0) / (v1 - v0) * (t1 - t0)
    slope = abs(v1 - v0) / (t1 - t0)
    if v0 < lower:
        # kept piece is [tc, t1]; move tc left if rounding steepened it
        while t0 < tc < t1 and abs(v1 - lower) / (t1 - tc) > slope:
            tc = math.nextafter(tc, t0)
    else:
        while t0 < tc < t1 and abs(v0 - lower) / (tc - t0) > slope:
            tc = math.nextafter(tc, t1)
    return tc


def retract(phi: History, spec: DomainSpec) -> History:
    """Component-wise clamp at -B, inserting crossing nodes so the result stays exactly piecewise linear.

    Inserted nodes may sit a few thousand ulps off the exact crossing so that no node-to-node
    slope of the result exceeds lip(phi) in floating point.
    """
    if phi.d != spec.n:
        raise ValueError(f"history has d={phi.d}, domain expects n={spec.n}")
    lower = -spec.B
    t, v = phi.times, phi.values
    anchors = {}
    for k in range(len(t) - 1):
        for i in range(phi.d):
            a, b = v[k, i], v[k + 1, i]
            if (a < lower < b) or (b < lower < a):
                tc = _crossing_time(t[k], t[k + 1], a, b, lower)
                if t[k] < tc < t[k + 1]:
                    # tc may drift toward the clamped side without steepening component i
                    anchors[tc] = t[k] if a < lower else t[k + 1]
    if not anchors:
        return History(phi.h, t, np.maximum(v, lower))
    times = np.unique(np.concatenate([t, list(anchors)]))
    vals = np.maximum(_interp_all(times, t, v), lower)
    _repair_slopes(times, vals, anchors, t, v, _slope_cap(phi), lower)
    return History(phi.h, times, vals)


def _interp_all(x, t, v):
    return np.column_stack([np.interp(x, t, v[:, i]) for i in range(v.shape[1])])


def _slope_cap(phi: History) -> float:
    s = np.abs(np.diff(phi.values, axis=0)) / np.diff(phi.times)[:, None]
    return float(np.max(s))


def _fit_node(times, vals, k, L, lower, max_ulps=64) -> bool:
    """Nudge row k by ulps until both adjacent slopes are <= L; False if some component cannot be fixed."""
    dl, dr = times[k] - times[k - 1], times[k + 1] - times[k]
    ok = True
    for i in range(vals.shape[1]):
        a, b = vals[k - 1, i], vals[k + 1, i]
        for _ in range(max_ulps):
            c = vals[k, i]
            left, right = abs(c - a) / dl > L, abs(b - c) / dr > L
            if left and right:
                vals[k, i] = _squeeze(a, b, dl, dr, L, lower, c)
                break
            if left:
                vals[k, i] = max(math.nextafter(c, a), lower)
            elif right:
                vals[k, i] = max(math.nextafter(c, b), lower)
            else:
                break
        c = vals[k, i]
        ok &= abs(c - a) / dl <= L and abs(b - c) / dr <= L
    return ok


def _squeeze(a, b, dl, dr, L, lower, c, span=16):
    """A value within a few ulps of the chord point meeting both slope caps, else ``c`` unchanged."""
    up = down = max(a + (b - a) * (dl / (dl + dr)), lower)
    for _ in range(span):
        for x in (up, down):
            if abs(x - a) / dl <= L and abs(b - x) / dr <= L:
                return x
        up, down = math.nextafter(up, math.inf), max(math.nextafter(down, -math.inf), lower)
    return c


def _repair_slopes(times, vals, anchors, t, v, L, lower, max_shift=4096, passes=4) -> None:
    idx = {float(x): k for k, x in enumerate(times)}
    for _ in range(passes):
        clean = True
        for tc, anchor in anchors.items():
            k = idx[tc]
            if _fit_node(times, vals, k, L, lower):
                continue
            clean = False
            tk = times[k]
            for _ in range(max_shift):
                tk = math.nextafter(tk, anchor)
                if not times[k - 1] < tk < times[k + 1]:
                    break
                times[k] = tk
                vals[k] = np.maximum(_interp_all(np.array([tk]), t, v)[0], lower)
                if _fit_node(times, vals, k, L, lower):
                    break
        if clean:
            return


@dataclass
class FeedbackReport:
    samples: list = field(default_factory=list)

    @property
    def all_pass(self) -> bool:
        return all(s["pass"] for s in self.samples)

    def to_dict(self) -> dict:
        return {"samples": self.samples, "all_pass": self.all_pass}


def check_feedback(
    rhs: Callable[[History], Sequence[float]],
    spec: DomainSpec,
    samples: Sequence[History],
    tol: float = FEEDBACK_TOL,
) -> FeedbackReport:
    """Check f_i(phi) >= -tol for every component sitting on the lower boundary at 0.

    Samples with no boundary component are rejected with a diagnostic entry
    (``pass`` False, ``rejected`` True).
    """
    report = FeedbackReport()
    for k, phi in enumerate(samples):
        at_zero = phi.values[-1]
        boundary = [i for i in range(spec.n) if abs(at_zero[i] + spec.B) <= 1e-14]
        if not boundary:
            report.samples.append({
                "index": k, "boundary_components": [], "f_values": [], "pass": False,
                "rejected": True, "diagnostic": "no component satisfies phi_i(0) = -B",
            })
            continue
        f = np.asarray(rhs(phi), dtype=float)
        fv = [float(f[i]) for i in boundary]
        report.samples.append({
            "index": k, "boundary_components": boundary, "f_values": fv,
            "pass": all(x >= -tol for x in fv), "rejected": False,
        })
    return report


def counterexample_history(n: int) -> History:
    """The sequence x_n on [0, 2] whose retracted images fail to form a closed set.

    Stored with the usual convention: node time ``t - 2`` on [-2, 0].
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    knots = [0.0, 1.0 - 1.0 / n, 1.0, 1.0 + 1.0 / n, 2.0]
    vals = [1.0 / n, 1.0 / n, 0.0, -1.0, -1.0]
    return History(2.0, np.array(knots) - 2.0, np.array(vals))


def counterexample_value(n: int, t: float) -> float:
    """x_n(t) for t in [0, 2], straight from the piecewise definition."""
    if t < 1.0 - 1.0 / n:
        return 1.0 / n
    if t < 1.0:
        return 1.0 - t
    if t < 1.0 + 1.0 / n:
        return -n * (t - 1.0)
    return -1.0


def counterexample_distances(ns: Sequence[int], B: float = 0.0) -> list[dict]:
    """Sup distances between consecutive retracted counterexample histories (diagnostic only)."""
    from .histories import sup_norm

    spec = DomainSpec(B=B, n=1)
    out = []
    for a, b in zip(ns[:-1], ns[1:]):
        ra, rb = retract(counterexample_history(a), spec), retract(counterexample_history(b), spec)
        out.append({"n": a, "m": b, "raw": sup_norm(counterexample_history(a) - counterexample_history(b)),
                    "retracted": sup_norm(ra - rb)})
    return out
