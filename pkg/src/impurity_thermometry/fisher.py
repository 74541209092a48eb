"""Temperature Fisher information of the impurity momentum distribution.

All derivatives are taken with respect to the bath temperature at fixed
protocol time ``t``; protocols run "at tau" substitute ``t = tau(T_true)``
before differentiating.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from .core import DomainError, FrictionLaw
from .errors import (
    NonconvergentQuadratureError,
    SingularFIMError,
    StepUnderflowError,
    ZeroInformationError,
)
from .propagator import BathStage, GaussianMomentumState, compose_baths, density_at, evolve_gaussian

__all__ = [
    "AsymptoticCase",
    "AsymptoticValidityWarning",
    "FisherReport",
    "FisherMatrix2",
    "gaussian_fisher",
    "fi_numeric",
    "fi_gaussian",
    "fi_general_closed",
    "general_fisher",
    "fi_asymptotic",
    "fisher_matrix_two_bath",
    "fisher_matrix_two_bath_numeric",
    "crb_trace_bound",
    "cramer_rao",
]

E2M1 = math.e**2 - 1


class AsymptoticValidityWarning(UserWarning):
    pass


class AsymptoticCase(enum.Enum):
    LOWT_DELTA_POS = "lowt-delta-pos"
    LOWT_DELTA_ZERO = "lowt-delta-zero"
    TAU_DELTA_POS = "tau-delta-pos"
    TAU_DELTA_ZERO = "tau-delta-zero"
    TAU_P0_ZERO = "tau-p0-zero"

    @classmethod
    def parse(cls, value) -> "AsymptoticCase":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == key or member.name.lower().replace("_", "-") == key:
                return member
        raise DomainError(f"unknown asymptotic case {value!r}")


@dataclass
class FisherReport:
    value: float
    method: str
    params: dict
    discrepancy: float | None = None
    margin: float | None = None

    def __post_init__(self):
        if self.value < 0:
            raise DomainError(f"Fisher information must be >= 0, got {self.value!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FisherMatrix2:
    chi11: float
    chi12: float
    chi22: float
    trace_bound: float = field(init=False)
    discrepancy: float | None = None

    def __post_init__(self):
        scale = max(self.chi11 * self.chi22, 0.0)
        if self.chi11 < 0 or self.chi22 < 0 or self.det < -1e-12 * scale:
            raise DomainError("Fisher matrix is not positive semidefinite")
        self.trace_bound = (self.chi11 + self.chi22) / self.det if self.det > 1e-12 * scale else math.inf

    @property
    def det(self) -> float:
        return self.chi11 * self.chi22 - self.chi12**2

    def as_array(self) -> np.ndarray:
        return np.array([[self.chi11, self.chi12], [self.chi12, self.chi22]])

    def to_dict(self) -> dict:
        return {
            "chi11": self.chi11,
            "chi12": self.chi12,
            "chi22": self.chi22,
            "trace_bound": self.trace_bound,
            "discrepancy": self.discrepancy,
        }


def _echo(state: GaussianMomentumState, bath: BathStage) -> dict:
    return {
        "T": bath.T,
        "t": bath.duration,
        "P0": state.mean,
        "Delta": state.Delta,
        "M": bath.M,
        "Gamma": bath.law.Gamma,
        "n": bath.law.n,
    }


def gaussian_fisher(T, t, P0, V, M, Gamma, n):
    """Vectorised Gaussian-family Fisher information at fixed ``t``.

    ``(d mu/dT)^2 / s2 + (d s2/dT)^2 / (2 s2^2)`` with
    ``mu = P0 e^{-x}``, ``s2 = M T (1 - e^{-2x}) + V e^{-2x}``, ``x = t Gamma T^n``.
    """
    T = np.asarray(T, dtype=float)
    x = t * Gamma * T**n
    dx = n * t * Gamma * T ** (n - 1.0)
    E = np.exp(-2 * x)
    one_minus_E = -np.expm1(-2 * x)
    dmu = -P0 * np.exp(-x) * dx
    s2 = M * T * one_minus_E + V * E
    ds2 = M * one_minus_E + 2 * dx * E * (M * T - V)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = dmu**2 / s2 + ds2**2 / (2 * s2**2)
    return out


def fi_gaussian(state0: GaussianMomentumState, bath: BathStage) -> FisherReport:
    if bath.duration == 0:
        return FisherReport(0.0, "gaussian_closed", _echo(state0, bath))
    if evolve_gaussian(state0, bath).variance <= 0:
        raise DomainError("evolved variance must be positive")
    value = gaussian_fisher(
        bath.T, bath.duration, state0.mean, state0.variance, bath.M, bath.law.Gamma, bath.law.n
    )
    return FisherReport(float(value), "gaussian_closed", _echo(state0, bath))


def general_fisher(T, t, P0, Delta, M, Gamma, n):
    """Closed-form general expression in terms of ``R = e^{2 t Gamma T^n} - 1``."""
    T = np.asarray(T, dtype=float)
    R = np.expm1(2 * t * Gamma * T**n)
    bracket = (
        n**2 * t**2 * T ** (2 * n) * ((P0**2 - 4 * M * T) * Delta + 2 * M * T * (R * P0**2 + 2 * M * T) + Delta**2)
        + (R * M * T / Gamma) ** 2
        + 2 * n * M * R * t * T ** (n + 1) * (2 * M * T - Delta) / Gamma
    )
    return 2 * Gamma**2 * (T * (2 * R * M * T + Delta)) ** -2.0 * bracket


def fi_general_closed(state0: GaussianMomentumState, bath: BathStage) -> FisherReport:
    """General expression, with its relative discrepancy from :func:`fi_gaussian` attached."""
    if not (bath.duration > 0):
        raise DomainError("general closed form needs t > 0")
    value = float(
        general_fisher(bath.T, bath.duration, state0.mean, state0.Delta, bath.M, bath.law.Gamma, bath.law.n)
    )
    ref = fi_gaussian(state0, bath).value
    disc = abs(value - ref) / ref if ref > 0 else abs(value)
    return FisherReport(value, "general_closed", _echo(state0, bath), discrepancy=disc)


def _evolved_at(state0: GaussianMomentumState, bath: BathStage, T: float) -> GaussianMomentumState:
    shifted = BathStage(T=T, law=bath.law, duration=bath.duration, M=bath.M)
    return evolve_gaussian(state0, shifted)


def _richardson(fun, T, rel_step):
    h = rel_step * T
    if h <= 0 or T + h == T or T - h == T:
        raise StepUnderflowError(f"finite-difference step {h:g} underflows at T={T:g}")

    def central(step):
        return (fun(T + step) - fun(T - step)) / (2 * step)

    return lambda: (4 * central(h / 2) - central(h)) / 3


def fi_numeric(
    state0: GaussianMomentumState,
    bath: BathStage,
    rel_step: float = 1e-4,
    rtol: float = 1e-10,
    width: float = 12.0,
) -> FisherReport:
    """Quadrature of ``(d_T f)^2 / f`` with a Richardson-extrapolated central difference.

    The density at the perturbed temperatures is rebuilt from the closed-form
    propagator; only its ``T`` dependence is differentiated numerically.
    """
    final = evolve_gaussian(state0, bath)
    if final.variance <= 0:
        raise DomainError("evolved variance must be positive")
    T = bath.T
    lo = final.mean - width * final.std
    hi = final.mean + width * final.std

    def integrand(P):
        d = _richardson(lambda Tp: density_at(_evolved_at(state0, bath, Tp), P), T, rel_step)()
        f = density_at(final, P)
        return d * d / f if f > 0 else 0.0

    result = integrate.quad(integrand, lo, hi, points=[final.mean], epsabs=0.0, epsrel=rtol, limit=400, full_output=True)
    value, abserr = result[0], result[1]
    if len(result) > 3 and abserr > 1e-7 * abs(value):
        raise NonconvergentQuadratureError(
            f"Fisher quadrature did not converge (value={value:g}, abserr={abserr:g})"
        )
    return FisherReport(float(value), "quadrature", _echo(state0, bath))


def fi_asymptotic(
    case,
    T: float,
    n: int,
    P0: float = 0.0,
    Delta: float = 0.0,
    M: float = 1.0,
    Gamma: float = 1.0,
    t: float | None = None,
    min_margin: float = 10.0,
) -> FisherReport:
    """Limiting Fisher information for one of the five asymptotic cases.

    The report's ``margin`` measures how well the case's small-parameter
    assumption holds (larger is better, ``inf`` when the formula is exact).
    A warning is issued when ``margin < min_margin``.

    The ``LOWT_DELTA_ZERO`` momentum term carries ``Gamma`` explicitly:
    ``n^2 P0^2 Gamma t T^{n-3} / (2M)``.
    """
    case = AsymptoticCase.parse(case)
    if T <= 0:
        raise DomainError("T must be positive")
    params = {"T": T, "t": t, "P0": P0, "Delta": Delta, "M": M, "Gamma": Gamma, "n": n}
    if case in (AsymptoticCase.LOWT_DELTA_POS, AsymptoticCase.LOWT_DELTA_ZERO):
        if t is None or t <= 0:
            raise DomainError(f"{case.value} needs a positive protocol time t")
        x = t * Gamma * T**n
        margin = 1 / x
        if case is AsymptoticCase.LOWT_DELTA_POS:
            if Delta <= 0:
                raise DomainError("lowt-delta-pos needs Delta > 0")
            value = 2 * (n * t * Gamma) ** 2 * T ** (2 * n - 2) * (P0**2 + Delta) / Delta
            # initial variance must dominate the thermal scale M T
            margin = min(margin, Delta / (2 * M * T))
        else:
            value = (1 + n) ** 2 / (2 * T**2) + n**2 * P0**2 * Gamma * t * T ** (n - 3) / (2 * M)
            if Delta > 0:
                margin = min(margin, 4 * M * T * x / Delta)
    else:
        params["t"] = 1 / (Gamma * T**n)
        if case is AsymptoticCase.TAU_DELTA_POS:
            if Delta <= 0:
                raise DomainError("tau-delta-pos needs Delta > 0")
            value = 2 * n**2 * (P0**2 + Delta) / (T**2 * Delta)
            margin = Delta / (2 * M * T * E2M1)
        elif case is AsymptoticCase.TAU_DELTA_ZERO:
            if P0 == 0:
                raise DomainError("tau-delta-zero needs P0 != 0")
            value = n**2 * P0**2 / (M * T**3 * E2M1)
            margin = 2 * n**2 * P0**2 * E2M1 / (M * T * (E2M1 + 2 * n) ** 2)
            if Delta > 0:
                margin = min(margin, 2 * M * T * E2M1 / Delta)
        else:
            value = (2 * n + E2M1) ** 2 / (2 * T**2 * E2M1**2)
            margin = math.inf if P0 == 0 and Delta == 0 else 0.0
    if margin < min_margin:
        warnings.warn(
            f"{case.value}: validity margin {margin:.3g} < {min_margin:g}",
            AsymptoticValidityWarning,
            stacklevel=2,
        )
    return FisherReport(float(value), f"asymptotic:{case.value}", params, margin=float(margin))


def _two_bath_gradients(state0: GaussianMomentumState, stage1: BathStage, stage2: BathStage):
    """Mean, variance and their T1/T2 gradients after both stages (t1, t2 fixed)."""
    out = []
    for st in (stage1, stage2):
        law = st.law
        x = st.duration * law.Gamma * st.T**law.n
        dx = law.n * st.duration * law.Gamma * st.T ** (law.n - 1.0)
        out.append((x, dx, math.exp(-2 * x), -math.expm1(-2 * x)))
    (x1, dx1, E1, omE1), (x2, dx2, E2, omE2) = out
    V = state0.variance
    mu = state0.mean * math.exp(-x1 - x2)
    V1 = stage1.M * stage1.T * omE1 + V * E1
    s2 = stage2.M * stage2.T * omE2 + V1 * E2
    dmu = np.array([-dx1 * mu, -dx2 * mu])
    dV1 = stage1.M * omE1 + 2 * dx1 * E1 * (stage1.M * stage1.T - V)
    ds2 = np.array([E2 * dV1, stage2.M * omE2 + 2 * dx2 * E2 * (stage2.M * stage2.T - V1)])
    return mu, s2, dmu, ds2


def _check_singular(chi: FisherMatrix2) -> FisherMatrix2:
    if not math.isfinite(chi.trace_bound):
        raise SingularFIMError(
            f"two-temperature Fisher matrix is singular (det={chi.det:.3e})", matrix=chi
        )
    return chi


def fisher_matrix_two_bath(
    state0: GaussianMomentumState,
    stage1: BathStage,
    stage2: BathStage,
    crosscheck: bool = False,
) -> FisherMatrix2:
    """Fisher matrix of (T1, T2) from the momentum after two consecutive baths.

    Raises
    ------
    SingularFIMError
        The matrix has (numerically) zero determinant, e.g. ``t2 = 0``.
    """
    mu, s2, dmu, ds2 = _two_bath_gradients(state0, stage1, stage2)
    if s2 <= 0:
        raise DomainError("final variance must be positive")
    chi = np.outer(dmu, dmu) / s2 + np.outer(ds2, ds2) / (2 * s2**2)
    result = FisherMatrix2(float(chi[0, 0]), float(chi[0, 1]), float(chi[1, 1]))
    if crosscheck:
        num = fisher_matrix_two_bath_numeric(state0, stage1, stage2)
        result.discrepancy = float(np.max(np.abs(num - chi)) / np.max(np.abs(chi)))
    return _check_singular(result)


def fisher_matrix_two_bath_numeric(
    state0: GaussianMomentumState,
    stage1: BathStage,
    stage2: BathStage,
    rel_step: float = 1e-4,
    rtol: float = 1e-10,
    width: float = 12.0,
) -> np.ndarray:
    """Quadrature of ``d_j f d_k f / f`` with finite-difference derivatives of the composed density."""
    final = compose_baths(state0, [stage1, stage2])
    if final.variance <= 0:
        raise DomainError("final variance must be positive")

    def density(T1, T2, P):
        s1 = BathStage(T=T1, law=stage1.law, duration=stage1.duration, M=stage1.M)
        s2 = BathStage(T=T2, law=stage2.law, duration=stage2.duration, M=stage2.M)
        return density_at(compose_baths(state0, [s1, s2]), P)

    T1, T2 = stage1.T, stage2.T
    lo, hi = final.mean - width * final.std, final.mean + width * final.std
    chi = np.empty((2, 2))

    def grad(P):
        g1 = _richardson(lambda x: density(x, T2, P), T1, rel_step)()
        g2 = _richardson(lambda x: density(T1, x, P), T2, rel_step)()
        return g1, g2

    for j, k in ((0, 0), (0, 1), (1, 1)):
        def integrand(P, j=j, k=k):
            g = grad(P)
            f = density_at(final, P)
            return g[j] * g[k] / f if f > 0 else 0.0

        chi[j, k] = integrate.quad(integrand, lo, hi, points=[final.mean], epsabs=0.0, epsrel=rtol, limit=400)[0]
    chi[1, 0] = chi[0, 1]
    return chi


def crb_trace_bound(chi) -> float:
    """Lower bound ``(chi11 + chi22) / det(chi)`` on ``var(T1) + var(T2)``."""
    if isinstance(chi, FisherMatrix2):
        a, b, c = chi.chi11, chi.chi12, chi.chi22
    else:
        m = np.asarray(chi, dtype=float)
        if m.shape != (2, 2):
            raise DomainError("expected a 2x2 matrix")
        a, b, c = m[0, 0], 0.5 * (m[0, 1] + m[1, 0]), m[1, 1]
    det = a * c - b * b
    if det <= 1e-12 * max(a * c, 0.0) or det <= 0:
        raise SingularFIMError(f"Fisher matrix is singular (det={det:.3e})")
    return float((a + c) / det)


def cramer_rao(fi, N: int = 1) -> float:
    """``1 / (N * FI)``; ``fi`` may be a :class:`FisherReport` or a number."""
    value = fi.value if isinstance(fi, FisherReport) else float(fi)
    if N < 1:
        raise DomainError("N must be >= 1")
    if value <= 0:
        raise ZeroInformationError("Fisher information is zero; no unbiased estimator exists")
    return 1.0 / (N * value)
