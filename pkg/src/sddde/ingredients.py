"""Parametric ingredient families and their packing into the kernel array."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K


@dataclass(frozen=True)
class Profile:
    """A smooth function of maturity y.

    kinds: ``const`` c0; ``affine`` c0 + c1 (y - c2); ``exp`` c0 + c1 exp(c2 (y - c3));
    ``tanh`` c0 + c1 tanh(c2 (y - c3)).
    """

    kind: str = "const"
    coeffs: tuple = (0.0,)

    def __post_init__(self):
        if self.kind not in K.PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        c = tuple(float(x) for x in self.coeffs)
        if len(c) > 4:
            raise ValueError("at most four coefficients")
        object.__setattr__(self, "coeffs", c + (0.0,) * (4 - len(c)))

    @classmethod
    def const(cls, c: float) -> "Profile":
        return cls("const", (c,))

    def write(self, P: np.ndarray, off: int) -> None:
        P[off] = K.PROFILE_KINDS[self.kind]
        P[off + 1 : off + 5] = self.coeffs

    def __call__(self, y):
        P = np.zeros(K.PACK_SIZE)
        self.write(P, K.PROF_G1)
        return np.vectorize(lambda yy: K.profile(P, K.PROF_G1, yy))(y)

    def derivative(self, y):
        P = np.zeros(K.PACK_SIZE)
        self.write(P, K.PROF_G1)
        return np.vectorize(lambda yy: K.profile_dy(P, K.PROF_G1, yy))(y)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "coeffs": list(self.coeffs)}

    @classmethod
    def from_spec(cls, spec) -> "Profile":
        if isinstance(spec, (int, float)):
            return cls.const(float(spec))
        return cls(spec.get("kind", "const"), tuple(spec.get("coeffs", (0.0,))))


@dataclass(frozen=True)
class GFamily:
    """Maturation speed g(y, z).

    ``const``    g = base
    ``exp``      g = base + exp(-rate z) p1(y)
    ``division`` g = base + 2 [1 - p1(y) / (1 + rate z)] p2(y)      (p1 = a, p2 = p)
    ``rational`` g = base + p1(y) / (1 + rate z)
    """

    kind: str = "const"
    base: float = 1.0
    rate: float = 0.0
    p1: Profile = field(default_factory=lambda: Profile.const(0.0))
    p2: Profile = field(default_factory=lambda: Profile.const(0.0))

    def __post_init__(self):
        if self.kind not in K.G_KINDS:
            raise ValueError(f"unknown g family {self.kind!r}")

    @classmethod
    def const(cls, value: float) -> "GFamily":
        return cls("const", base=value)

    @classmethod
    def exp(cls, floor: float, gamma_g: Profile, rate: float = 1.0) -> "GFamily":
        return cls("exp", base=floor, rate=rate, p1=gamma_g)

    @classmethod
    def division(cls, a: Profile, p: Profile, k_g: float, floor: float = 0.0) -> "GFamily":
        return cls("division", base=floor, rate=k_g, p1=a, p2=p)

    @classmethod
    def rational(cls, numerator: Profile, rate: float, base: float = 0.0) -> "GFamily":
        return cls("rational", base=base, rate=rate, p1=numerator)

    def write(self, P: np.ndarray) -> None:
        P[K.G_KIND] = K.G_KINDS[self.kind]
        P[K.G_BASE] = self.base
        P[K.G_RATE] = self.rate
        self.p1.write(P, K.PROF_G1)
        self.p2.write(P, K.PROF_G2)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "base": self.base, "rate": self.rate,
                "p1": self.p1.to_dict(), "p2": self.p2.to_dict()}

    @classmethod
    def from_spec(cls, spec: dict) -> "GFamily":
        return cls(
            spec.get("kind", "const"),
            float(spec.get("base", 1.0)),
            float(spec.get("rate", 0.0)),
            Profile.from_spec(spec.get("p1", 0.0)),
            Profile.from_spec(spec.get("p2", 0.0)),
        )


@dataclass(frozen=True)
class DeathRate:
    """d(y, z) = alpha(y) / (1 + k_d z) - mu_u(y)."""

    alpha: Profile = field(default_factory=lambda: Profile.const(0.0))
    mu_u: Profile = field(default_factory=lambda: Profile.const(0.0))
    k_d: float = 0.0

    def __post_init__(self):
        if self.k_d < 0:
            raise ValueError("k_d must be nonnegative")

    def write(self, P: np.ndarray) -> None:
        P[K.KD] = self.k_d
        self.alpha.write(P, K.PROF_ALPHA)
        self.mu_u.write(P, K.PROF_MUU)

    def tail(self, y):
        """Limit of d(y, z) as z -> infinity."""
        a = self.alpha(y) if self.k_d == 0 else 0.0 * np.asarray(y, dtype=float)
        return a - self.mu_u(y)
