"""Piecewise-linear history functions on [-h, 0].

A :class:`History` is the state of the delay equation: a Lipschitz function on
``[-h, 0]`` stored as nodes and evaluated by linear interpolation.  Sup-norm
and Lipschitz constant are therefore exact node computations.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

if TYPE_CHECKING:
    from .integrator import Trajectory

CLAMP_TOL = 1e-12
# relative spacing below which two grid times are treated as one node
MERGE_TOL = 1e-12


class HistoryDomainError(ValueError):
    """Raised when a history is evaluated outside [-h, 0]."""


@dataclass(frozen=True, eq=False)
class History:
    """Lipschitz function on ``[-h, 0]`` with values in R^d.

    ``times`` is strictly increasing from ``-h`` to ``0``; ``values`` has
    shape ``(m, d)``.
    """

    h: float
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if self.h <= 0:
            raise ValueError("h must be positive")
        if t.ndim != 1 or t.size < 2 or v.shape[0] != t.size:
            raise ValueError("need at least two nodes and one value row per node")
        if np.any(np.diff(t) <= 0):
            raise ValueError("node times must be strictly increasing")
        if t[0] != -self.h or t[-1] != 0.0:
            raise ValueError(f"node times must span exactly [-h, 0], got [{t[0]}, {t[-1]}]")
        if not np.all(np.isfinite(v)):
            raise ValueError("history values must be finite")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    # -- construction -------------------------------------------------
    @classmethod
    def constant(cls, h: float, value, m: int = 2) -> "History":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        times = np.linspace(-h, 0.0, m)
        times[0], times[-1] = -h, 0.0
        return cls(h, times, np.tile(value, (m, 1)))

    @classmethod
    def from_function(cls, h: float, fn, m: int = 65) -> "History":
        times = np.linspace(-h, 0.0, m)
        times[0], times[-1] = -h, 0.0
        vals = np.array([np.atleast_1d(fn(t)) for t in times], dtype=float)
        return cls(h, times, vals)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def component(self, i: int) -> "History":
        return History(self.h, self.times, self.values[:, i : i + 1])

    # -- evaluation ---------------------------------------------------
    def __call__(self, s):
        return evaluate(self, s)

    def resample(self, times: np.ndarray) -> "History":
        vals = np.column_stack([np.interp(times, self.times, self.values[:, i]) for i in range(self.d)])
        return History(self.h, times, vals)

    # -- algebra (on the union grid) ----------------------------------
    def _binary(self, other, op) -> "History":
        if isinstance(other, History):
            if abs(other.h - self.h) > MERGE_TOL * max(1.0, self.h):
                raise ValueError("histories have different h")
            grid = union_grid(self.times, other.times, self.h)
            a, b = self.resample(grid), other.resample(grid)
            return History(self.h, grid, op(a.values, b.values))
        return History(self.h, self.times, op(self.values, np.asarray(other, dtype=float)))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, alpha):
        return History(self.h, self.times, self.values * float(alpha))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def same_nodes(self, other: "History") -> bool:
        return (
            self.times.shape == other.times.shape
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )

    # -- serialization ------------------------------------------------
    def to_dict(self) -> dict:
        return {"h": self.h, "nodes": [[float(t), [float(x) for x in v]] for t, v in zip(self.times, self.values)]}

    @classmethod
    def from_dict(cls, doc: dict) -> "History":
        nodes = doc["nodes"]
        times = [float(n[0]) for n in nodes]
        vals = [np.atleast_1d(np.asarray(n[1], dtype=float)) for n in nodes]
        return cls(float(doc["h"]), np.array(times), np.array(vals))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "History":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"v{i + 1}" for i in range(self.d)])
        for t, v in zip(self.times, self.values):
            writer.writerow([repr(float(t))] + [repr(float(x)) for x in v])
        return buf.getvalue()


def union_grid(a: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    """Sorted union of two node grids on [-h, 0], merging near-duplicates."""
    grid = np.union1d(a, b)
    keep = np.concatenate([[True], np.diff(grid) > MERGE_TOL * max(1.0, h)])
    grid = grid[keep]
    grid[0], grid[-1] = -h, 0.0
    return grid


def evaluate(phi: History, s):
    """Value of ``phi`` at ``s`` in [-h, 0] (scalar or array of times).

    Times within 1e-12 of the interval are clamped inside; anything further
    out raises :class:`HistoryDomainError`.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < -phi.h - CLAMP_TOL) or np.any(s_arr > CLAMP_TOL):
        raise HistoryDomainError(f"evaluation time outside [-{phi.h}, 0]: {s}")
    s_arr = np.clip(s_arr, -phi.h, 0.0)
    out = np.stack([np.interp(s_arr, phi.times, phi.values[:, i]) for i in range(phi.d)], axis=-1)
    if phi.d == 1:
        out = out[..., 0]
    return float(out) if np.ndim(out) == 0 else out


def sup_norm(phi: History) -> float:
    """Sup-norm with the max-norm on R^d; extrema of a piecewise-linear function sit at nodes."""
    return float(np.max(np.abs(phi.values)))


def lip(phi: History) -> float:
    """Largest absolute node-to-node slope (max over components)."""
    slopes = np.abs(np.diff(phi.values, axis=0)) / np.diff(phi.times)[:, None]
    return float(np.max(slopes)) if slopes.size else 0.0


def random_lipschitz(seed, h: float, d: int = 1, A: float = 1.0, R: float = 1.0, m: int = 9) -> History:
    """Random nonnegative history with values in [0, A] and lip <= R.

    Uniform node grid; each component is a clipped random walk whose
    increments never exceed ``R * dt`` in magnitude, so both bounds hold
    exactly at the nodes.  Deterministic in ``seed``.
    """
    if A < 0 or R < 0:
        raise ValueError("A and R must be nonnegative")
    if m < 2:
        raise ValueError("need m >= 2 nodes")
    rng = np.random.default_rng(seed)
    times = np.linspace(-h, 0.0, m)
    times[0], times[-1] = -h, 0.0
    dts = np.diff(times)
    vals = np.empty((m, d))
    vals[0] = rng.uniform(0.0, A, size=d)
    # 1e-9 head-room absorbs rounding in the slope quotient
    steps = rng.uniform(-1.0, 1.0, size=(m - 1, d)) * (R * dts * (1.0 - 1e-9))[:, None]
    for k in range(m - 1):
        vals[k + 1] = np.clip(vals[k] + steps[k], 0.0, A)
    return History(h, times, vals)


@dataclass(frozen=True, eq=False)
class HistoryPair:
    """Initial data (phi, psi) for the (w, v) system on a shared node grid.

    ``breaks`` lists the times in [-h, 0] where the solver splits a step when
    the delayed argument crosses them.  ``None`` means every node where
    either component changes slope, plus 0.  Segments cut from a trajectory
    carry the breaks inherited from their run.
    """

    phi: History
    psi: History
    resampled: bool = False
    breaks: Optional[tuple] = None

    def __post_init__(self):
        if self.breaks is not None:
            b = tuple(sorted(float(x) for x in self.breaks))
            if b and (b[0] < -self.phi.h - MERGE_TOL or b[-1] > MERGE_TOL):
                raise ValueError("breaks must lie in [-h, 0]")
            object.__setattr__(self, "breaks", b)
        if self.phi.d != 1 or self.psi.d != 1:
            raise ValueError("pair components must be scalar histories")
        if abs(self.phi.h - self.psi.h) > MERGE_TOL * max(1.0, self.phi.h):
            raise ValueError("pair components must share h")
        if not np.array_equal(self.phi.times, self.psi.times):
            grid = union_grid(self.phi.times, self.psi.times, self.phi.h)
            object.__setattr__(self, "phi", self.phi.resample(grid))
            object.__setattr__(self, "psi", self.psi.resample(grid.copy()))
            object.__setattr__(self, "resampled", True)

    @property
    def h(self) -> float:
        return self.phi.h

    @property
    def times(self) -> np.ndarray:
        return self.phi.times

    def break_times(self) -> np.ndarray:
        if self.breaks is not None:
            return np.array(self.breaks, dtype=float)
        t = self.times
        out = [0.0]
        for hist in (self.phi, self.psi):
            slope = np.diff(hist.values[:, 0]) / np.diff(t)
            jump = np.abs(np.diff(slope))
            scale = 1.0 + np.max(np.abs(slope))
            out.extend(t[1:-1][jump > 1e-12 * scale])
        return np.unique(np.array(out))

    @classmethod
    def constant(cls, h: float, w: float, v: float) -> "HistoryPair":
        return cls(History.constant(h, w), History.constant(h, v))

    @classmethod
    def from_stacked(cls, hist: History) -> "HistoryPair":
        if hist.d != 2:
            raise ValueError("stacked history must have d == 2")
        return cls(hist.component(0), hist.component(1))

    def stacked(self) -> History:
        return History(self.h, self.times, np.column_stack([self.phi.values[:, 0], self.psi.values[:, 0]]))

    def same_nodes(self, other: "HistoryPair") -> bool:
        return self.phi.same_nodes(other.phi) and self.psi.same_nodes(other.psi)

    def to_dict(self) -> dict:
        doc = {"phi": self.phi.to_dict(), "psi": self.psi.to_dict()}
        if self.breaks is not None:
            doc["breaks"] = list(self.breaks)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "HistoryPair":
        return cls(History.from_dict(doc["phi"]), History.from_dict(doc["psi"]), breaks=doc.get("breaks"))

    def to_csv(self) -> str:
        return self.stacked().to_csv()


def pair_distance(a: HistoryPair, b: HistoryPair) -> float:
    return sup_norm(a.stacked() - b.stacked())


def segment(traj: "Trajectory", t: float) -> HistoryPair:
    """The solution segment x_t, shifted to [-h, 0]."""
    return traj.segment(t)


def random_pair(seed, h: float, A: float, B: float, R_phi: float, R_psi: float, m: int = 9) -> HistoryPair:
    """Independent random histories: ``phi`` in [0, A] with lip <= R_phi, ``psi`` in [0, B] with lip <= R_psi."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s1, s2 = ss.spawn(2)
    return HistoryPair(random_lipschitz(s1, h, 1, A, R_phi, m), random_lipschitz(s2, h, 1, B, R_psi, m))
