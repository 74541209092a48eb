"""Bath-impurity parameters, friction regimes and kinetic coefficients.

Temperatures are energies (``kB`` only enters the dimensionless temperature
``T_tilde = kB*T/(m v^2)``).  With the defaults ``hbar = m = v = 1`` every
quantity is already in natural units.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import AmbiguousRegimeError, DomainError, NonconvergentQuadratureError

__all__ = [
    "HeavyImpurityWarning",
    "PhysicalParams",
    "Regime",
    "FrictionLaw",
    "ReflectionModel",
    "FrictionFit",
    "gamma_coefficient",
    "classify_regime",
    "relaxation_time",
    "diffusion_coefficient",
    "friction_force_asymptotic",
    "friction_force_integral",
    "fit_friction_law",
]


class HeavyImpurityWarning(UserWarning):
    """Impurity not much heavier than a bath boson; kinetic description is questionable."""


@dataclass(frozen=True)
class PhysicalParams:
    """Masses, sound velocity and coupling of the impurity-gas system.

    Parameters
    ----------
    M : float
        Impurity mass.
    m : float
        Boson mass.
    v : float
        Sound velocity of the Bogoliubov gas.
    G : float
        Impurity-boson contact coupling (energy x length).
    hbar, kB : float
        Unit constants, both 1 by default.
    """

    M: float
    m: float = 1.0
    v: float = 1.0
    G: float = 1.0
    hbar: float = 1.0
    kB: float = 1.0

    def __post_init__(self):
        for name in ("M", "m", "v", "G", "hbar", "kB"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be strictly positive, got {value!r}")
        if self.M / self.m < 10:
            warnings.warn(
                f"M/m = {self.M / self.m:g} < 10: heavy-impurity approximation is not justified",
                HeavyImpurityWarning,
                stacklevel=3,
            )

    @property
    def G_tilde(self) -> float:
        return self.G / (self.hbar * self.v)

    def T_tilde(self, T):
        return self.kB * np.asarray(T, dtype=float) / (self.m * self.v**2)

    def temperature(self, T_tilde):
        """Inverse of :meth:`T_tilde`."""
        return np.asarray(T_tilde, dtype=float) * self.m * self.v**2 / self.kB

    # natural units: energy m v^2, time hbar/(m v^2), momentum m v
    @property
    def energy_unit(self) -> float:
        return self.m * self.v**2

    @property
    def time_unit(self) -> float:
        return self.hbar / (self.m * self.v**2)

    @property
    def momentum_unit(self) -> float:
        return self.m * self.v

    def natural(self) -> "PhysicalParams":
        """Same physical system expressed with hbar = m = v = kB = 1."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", HeavyImpurityWarning)
            return PhysicalParams(M=self.M / self.m, m=1.0, v=1.0, G=self.G_tilde, hbar=1.0, kB=1.0)


class Regime(enum.Enum):
    STRONG_HIGH = "strong-high"  # 1/G~ << T~ << 1
    STRONG_LOW = "strong-low"  # T~ << 1/G~ << 1
    WEAK = "weak"  # G~ << 1, T~ << 1

    @property
    def exponent(self) -> int:
        return 2 if self is Regime.STRONG_HIGH else 4

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == key:
                return member
        raise DomainError(f"unknown regime {value!r}; expected one of {[m.value for m in cls]}")


@dataclass(frozen=True)
class FrictionLaw:
    """Linear drag ``F = -Gamma * P * T**n``."""

    Gamma: float
    n: int
    provenance: str = "user"

    def __post_init__(self):
        if not (np.isfinite(self.Gamma) and self.Gamma > 0):
            raise DomainError(f"Gamma must be positive, got {self.Gamma!r}")
        if self.n not in (2, 4):
            raise DomainError(f"friction exponent must be 2 or 4, got {self.n!r}")

    def rate(self, T):
        """Momentum decay rate ``Gamma * T**n`` (inverse relaxation time)."""
        return self.Gamma * np.asarray(T, dtype=float) ** self.n

    def tau(self, T):
        return relaxation_time(self, T)

    def to_dict(self) -> dict:
        return {"Gamma": self.Gamma, "n": self.n, "provenance": self.provenance}


class ReflectionModel:
    """Quasiparticle reflection probability ``k -> |r(k)|^2``, with ``k`` in units of m v / hbar.

    The exact amplitude from Bogoliubov-de Gennes scattering is not modelled;
    use :meth:`unit`, :meth:`quadratic` or wrap any callable bounded by [0, 1].
    """

    def __init__(self, evaluator: Callable[[np.ndarray], np.ndarray], name: str = "custom"):
        self._evaluator = evaluator
        self.name = name

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        r2 = np.asarray(self._evaluator(k), dtype=float)
        if np.any(r2 < 0) or np.any(r2 > 1):
            raise DomainError(f"reflection model {self.name!r} left [0, 1]")
        return r2

    def __repr__(self):
        return f"ReflectionModel({self.name})"

    @classmethod
    def unit(cls) -> "ReflectionModel":
        return cls(lambda k: np.ones_like(k), name="unit")

    @classmethod
    def quadratic(cls, c: float) -> "ReflectionModel":
        if c <= 0:
            raise DomainError(f"quadratic reflection needs c > 0, got {c!r}")
        return cls(lambda k: np.minimum(c * k**2, 1.0), name=f"quadratic(c={c:g})")

    @classmethod
    def calibrated(cls, regime: Regime, params: PhysicalParams) -> "ReflectionModel":
        """Built-in model whose low-T friction reproduces ``gamma_coefficient(params, regime)``."""
        regime = Regime.parse(regime)
        if regime is Regime.STRONG_HIGH:
            return cls.unit()
        g2 = params.G_tilde**2
        return cls.quadratic(g2 / 4 if regime is Regime.WEAK else g2)


def gamma_coefficient(params: PhysicalParams, regime: Regime) -> FrictionLaw:
    """Low-temperature drag coefficient and exponent for one of the three regimes."""
    regime = Regime.parse(regime)
    p = params
    if regime is Regime.STRONG_HIGH:
        gamma = 2 * math.pi / (3 * p.hbar * p.M * p.v**2)
    else:
        gamma = 2 * math.pi**3 * p.G**2 / (15 * p.hbar**3 * p.m**2 * p.M * p.v**8)
        if regime is Regime.STRONG_LOW:
            gamma *= 4
    return FrictionLaw(Gamma=gamma, n=regime.exponent, provenance=f"asymptotic:{regime.value}")


def classify_regime(params: PhysicalParams, T: float, margin: float = 10.0) -> Regime:
    """Pick the regime whose inequality chain holds with every ratio >= ``margin``.

    Raises
    ------
    AmbiguousRegimeError
        No chain holds; the message lists the violated inequality of each chain.
    """
    if T <= 0:
        raise DomainError(f"temperature must be positive, got {T!r}")
    t = float(params.T_tilde(T))
    g = params.G_tilde
    # (regime, [(label, small, large)]) ; each pair must satisfy large/small >= margin
    chains = [
        (Regime.STRONG_HIGH, [("1/G~ << T~", 1 / g, t), ("T~ << 1", t, 1.0)]),
        (Regime.STRONG_LOW, [("T~ << 1/G~", t, 1 / g), ("1/G~ << 1", 1 / g, 1.0)]),
        (Regime.WEAK, [("G~ << 1", g, 1.0), ("T~ << 1", t, 1.0)]),
    ]
    threshold = margin * (1 - 1e-12)
    violations = []
    for regime, conditions in chains:
        failed = [
            f"{label} (ratio {large / small:.3g})"
            for label, small, large in conditions
            if large / small < threshold
        ]
        if not failed:
            return regime
        violations.append(f"{regime.value}: " + ", ".join(failed))
    raise AmbiguousRegimeError(
        f"no regime holds with margin {margin:g} at G~={g:.4g}, T~={t:.4g}; violated: "
        + "; ".join(violations),
        G_tilde=g,
        T_tilde=t,
    )


def relaxation_time(law: FrictionLaw, T):
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise DomainError("relaxation time needs T > 0")
    tau = 1.0 / (law.Gamma * T**law.n)
    return float(tau) if tau.ndim == 0 else tau


def diffusion_coefficient(law: FrictionLaw, T, M: float):
    """Momentum diffusion ``D = 2 Gamma M T**(n+1)``, i.e. ``D = -2 F M T / P``."""
    T = np.asarray(T, dtype=float)
    if np.any(T < 0):
        raise DomainError("diffusion coefficient needs T >= 0")
    D = 2 * law.Gamma * M * T ** (law.n + 1)
    return float(D) if D.ndim == 0 else D


def friction_force_asymptotic(P, law: FrictionLaw, T):
    F = -law.Gamma * np.asarray(P, dtype=float) * np.asarray(T, dtype=float) ** law.n
    return float(F) if F.ndim == 0 else F


# sinh^2(y) ~ e^{2y}/4; at y = 45 the weight is ~1e-39 of its small-k value
_SINH_ARG_CUTOFF = 45.0


def _k_cutoff(T_tilde: float) -> float:
    a = 4 * T_tilde * _SINH_ARG_CUTOFF
    return math.sqrt(-2 + math.sqrt(4 + a * a))


def friction_force_integral(
    P,
    params: PhysicalParams,
    refl: ReflectionModel,
    T: float,
    rtol: float = 1e-8,
    limit: int = 200,
):
    """Drag force from the full quasiparticle-scattering integral.

    The integrand decays like ``exp(-k sqrt(4+k^2) / (2 T~))``; it is cut at
    ``k_max`` where the sinh argument reaches 45, which bounds the discarded
    tail by roughly ``1e-39`` relative to the small-k scale.

    Raises
    ------
    NonconvergentQuadratureError
        QUADPACK did not reach ``rtol`` within ``limit`` subintervals.
    """
    if T <= 0:
        raise DomainError(f"temperature must be positive, got {T!r}")
    tt = float(params.T_tilde(T))

    def integrand(k):
        s = math.sqrt(4 + k * k)
        sh = math.sinh(k * s / (4 * tt))
        return k * k * float(refl(k)) * (2 + k * k) / (sh * sh * s)

    k_max = _k_cutoff(tt)
    result = integrate.quad(
        integrand, 0.0, k_max, epsabs=0.0, epsrel=rtol, limit=limit, full_output=True
    )
    value, abserr = result[0], result[1]
    if len(result) > 3 or abserr > 10 * rtol * abs(value):
        raise NonconvergentQuadratureError(
            f"friction integral did not converge (value={value:g}, abserr={abserr:g})",
            T_tilde=tt,
        )
    p = params
    prefactor = p.m**2 * p.v**2 / (2 * math.pi * p.hbar * p.M * tt)
    F = -prefactor * value * np.asarray(P, dtype=float)
    return float(F) if F.ndim == 0 else F


@dataclass(frozen=True)
class FrictionFit:
    """Power-law fit ``-F/P = prefactor * T**slope`` over a temperature window."""

    slope: float
    prefactor: float
    law: FrictionLaw
    T_grid: tuple


def fit_friction_law(
    params: PhysicalParams,
    refl: ReflectionModel,
    T_grid: Sequence[float],
    rtol: float = 1e-8,
) -> FrictionFit:
    """Fit the integral friction to a power law and snap the exponent to 2 or 4.

    The returned law keeps the fitted exponent rounded to the nearest allowed
    value and re-fits ``Gamma`` with that exponent held fixed.
    """
    T = np.asarray(T_grid, dtype=float)
    if T.size < 2:
        raise DomainError("need at least two temperatures to fit")
    rate = np.array([-friction_force_integral(1.0, params, refl, Ti, rtol=rtol) for Ti in T])
    slope, intercept = np.polyfit(np.log(T), np.log(rate), 1)
    n = min((2, 4), key=lambda e: abs(e - slope))
    gamma = float(np.exp(np.mean(np.log(rate) - n * np.log(T))))
    law = FrictionLaw(Gamma=gamma, n=n, provenance=f"fitted:{refl.name}")
    return FrictionFit(slope=float(slope), prefactor=float(np.exp(intercept)), law=law, T_grid=tuple(T))
