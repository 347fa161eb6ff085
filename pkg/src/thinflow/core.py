"""Flow parameters, regime classification and the power-law constitutive law."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

import numpy as np

Number = Union[int, float, Fraction]

EXPONENT_TOL = 1e-12


class DomainError(ValueError):
    """A parameter lies outside the range the model is defined on."""


class RegimeError(ValueError):
    """The scaling laws violate the standing assumption sigma -> 0."""


class SingularViscosityError(ZeroDivisionError):
    """Unregularized shear-thinning viscosity evaluated at zero shear."""


def conjugate_exponent(r: Number) -> float:
    """Return r' = r / (r - 1) for a shear-thinning flow index 1 < r < 2."""
    if not (1 < r < 2):
        raise DomainError(f"flow index r={r} outside the shear-thinning range (1, 2)")
    return float(r) / (float(r) - 1.0)


@dataclass(frozen=True)
class FlowParams:
    r: float
    mu: float = 1.0
    r_conj: float = field(init=False)

    def __post_init__(self):
        if not (1 < self.r < 2):
            raise DomainError(f"flow index r={self.r} outside the shear-thinning range (1, 2)")
        if not self.mu > 0:
            raise DomainError(f"consistency mu={self.mu} must be positive")
        object.__setattr__(self, "r_conj", conjugate_exponent(self.r))


def _as_exact(x) -> Fraction | None:
    if isinstance(x, bool):
        return None
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    if isinstance(x, str):
        try:
            return Fraction(x.strip())
        except ValueError:
            return None
    return None


@dataclass(frozen=True)
class RegimeSpec:
    """Power laws delta = c_delta * eps**a_delta and h = c_h * eps**a_h.

    Exponents may be given as ``Fraction``/``int``/rational strings, in which
    case the regime comparison is exact.
    """

    r: Number
    a_delta: Number
    a_h: Number
    c_delta: float = 1.0
    c_h: float = 1.0

    def __post_init__(self):
        for name in ("r", "a_delta", "a_h"):
            val = getattr(self, name)
            if isinstance(val, str):
                object.__setattr__(self, name, Fraction(val.strip()))
        if not (1 < self.r < 2):
            raise DomainError(f"flow index r={self.r} outside the shear-thinning range (1, 2)")
        if not self.a_delta > 0:
            raise DomainError("a_delta must be positive (delta -> 0)")
        if not self.a_h > 0:
            raise DomainError("a_h must be positive (h -> 0)")
        if not (self.c_delta > 0 and self.c_h > 0):
            raise DomainError("prefactors must be positive")

    @property
    def exact(self) -> bool:
        return all(_as_exact(getattr(self, k)) is not None for k in ("r", "a_delta", "a_h"))

    @property
    def a_sigma(self) -> Number:
        """Exponent of sigma = eps / delta**((2-r)/r)."""
        if self.exact:
            r, ad = Fraction(self.r), Fraction(self.a_delta)
            return 1 - ad * (2 - r) / r
        r = float(self.r)
        return 1.0 - float(self.a_delta) * (2.0 - r) / r

    @property
    def c_sigma(self) -> float:
        r = float(self.r)
        return self.c_delta ** (-(2.0 - r) / r)


@dataclass(frozen=True)
class Regime:
    tag: str
    lam: float
    a_sigma: float
    a_h: float

    def __post_init__(self):
        ok = {
            "Darcy": self.lam == 0.0,
            "Brinkman": 0.0 < self.lam < math.inf,
            "Reynolds": self.lam == math.inf,
        }
        if self.tag not in ok or not ok[self.tag]:
            raise ValueError(f"inconsistent regime {self.tag} with lambda={self.lam}")

    def __str__(self):
        if self.tag == "Brinkman":
            return f"Brinkman, lambda={self.lam:g}"
        return self.tag


def classify_regime(spec: RegimeSpec) -> Regime:
    a_sigma = spec.a_sigma
    if a_sigma <= 0:
        raise RegimeError(
            f"sigma does not vanish: assumption (sigma_eps -> 0) violated (a_sigma={float(a_sigma):g})"
        )
    if spec.exact:
        diff = Fraction(a_sigma) - Fraction(spec.a_h)
        cmp = (diff > 0) - (diff < 0)
    else:
        diff = float(a_sigma) - float(spec.a_h)
        cmp = 0 if abs(diff) <= EXPONENT_TOL else (1 if diff > 0 else -1)
    # larger exponent means faster decay: sigma << h when a_sigma > a_h
    if cmp > 0:
        tag, lam = "Darcy", 0.0
    elif cmp < 0:
        tag, lam = "Reynolds", math.inf
    else:
        tag, lam = "Brinkman", spec.c_sigma / spec.c_h
    return Regime(tag, lam, float(a_sigma), float(spec.a_h))


def frobenius(shear) -> np.ndarray:
    a = np.asarray(shear, dtype=float)
    return np.sqrt(np.sum(a * a, axis=(-2, -1)))


def viscosity(shear, params: FlowParams, kappa: float = 0.0):
    """mu * (|D|^2 + kappa^2)^((r-2)/2) with |.| the Frobenius norm.

    ``shear`` is a symmetric 2x2 or 3x3 tensor, or a stack of them.
    """
    if kappa < 0:
        raise DomainError("kappa must be non-negative")
    norm2 = frobenius(shear) ** 2 + kappa * kappa
    if np.any(norm2 == 0.0):
        raise SingularViscosityError("shear-thinning viscosity diverges at zero shear (kappa=0)")
    out = params.mu * norm2 ** ((params.r - 2.0) / 2.0)
    return float(out) if np.ndim(out) == 0 else out
