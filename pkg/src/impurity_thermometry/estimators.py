"""Temperature estimators built on momentum samples, with their predicted errors.

Only ``T`` is unknown; the friction law, impurity mass, protocol time and the
initial momentum state are calibration.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .core import DomainError, FrictionLaw
from .errors import NoRootError, OutOfRangeError, ZeroSignalError
from .fisher import gaussian_fisher
from .propagator import BathStage, GaussianMomentumState, sample_trajectories

__all__ = [
    "Estimator",
    "Protocol",
    "Moments",
    "EstimationReport",
    "predict_moments",
    "predict_error_momentum",
    "predict_error_kinetic",
    "estimate_T_from_mean",
    "estimate_T_from_energy",
    "invert_second_moment",
    "mc_experiment",
]


class Estimator(enum.Enum):
    MOMENTUM_MEAN = "momentum-mean"
    KINETIC_ENERGY = "kinetic-energy"

    @classmethod
    def parse(cls, value) -> "Estimator":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == key or member.name.lower().replace("_", "-") == key:
                return member
        raise DomainError(f"unknown estimator {value!r}")


@dataclass(frozen=True)
class Protocol:
    """Known measurement protocol: initial state, friction law, mass and exposure time."""

    state: GaussianMomentumState
    law: FrictionLaw
    t: float
    M: float = 1.0

    def __post_init__(self):
        if not self.t >= 0:
            raise DomainError("protocol time must be >= 0")
        if not self.M > 0:
            raise DomainError("mass must be positive")

    @classmethod
    def at_tau(cls, state, law: FrictionLaw, T_nominal: float, M: float = 1.0, multiple: float = 1.0):
        """Protocol whose exposure is ``multiple`` relaxation times at ``T_nominal``."""
        return cls(state=state, law=law, t=multiple / law.rate(T_nominal), M=M)

    def bath(self, T: float) -> BathStage:
        return BathStage(T=T, law=self.law, duration=self.t, M=self.M)

    def mean_P(self, T):
        return self.state.mean * np.exp(-self.t * self.law.rate(T))

    def var_P(self, T):
        x = self.t * self.law.rate(T)
        return self.M * np.asarray(T, dtype=float) * -np.expm1(-2 * x) + self.state.variance * np.exp(-2 * x)

    def second_moment(self, T):
        return self.var_P(T) + self.mean_P(T) ** 2


class Moments(NamedTuple):
    mean_P: float
    var_P: float
    mean_P2: float
    var_P2: float
    var_P2_centered: float
    """``2 (var P)^2``: the fourth-moment form that drops the ``4 mean^2 var`` term."""


def predict_moments(protocol: Protocol, T: float) -> Moments:
    """First two moments of ``P`` and of ``P^2`` under the evolved Gaussian.

    ``var_P2`` is the full Gaussian value ``2 s^4 + 4 m^2 s^2``; for ``P0 = 0``
    it coincides with ``var_P2_centered``.
    """
    m = float(protocol.mean_P(T))
    s = float(protocol.var_P(T))
    return Moments(
        mean_P=m,
        var_P=s,
        mean_P2=s + m * m,
        var_P2=2 * s * s + 4 * m * m * s,
        var_P2_centered=2 * s * s,
    )


def predict_error_momentum(protocol: Protocol, T: float) -> float:
    """Error-propagated ``var(T)`` from one momentum sample: ``var P / (d mean_P/dT)^2``."""
    P0 = protocol.state.mean
    if P0 == 0:
        raise ZeroSignalError("mean momentum carries no temperature signal when P0 = 0")
    if protocol.t <= 0:
        raise DomainError("momentum estimator needs t > 0")
    law = protocol.law
    x = protocol.t * law.rate(T)
    E = math.exp(-2 * x)
    Delta_p = protocol.state.variance / (protocol.M * T)
    num = protocol.M * T * (1 - E * (1 - Delta_p))
    den = (P0 * law.n * protocol.t * law.Gamma) ** 2 * T ** (2 * law.n - 2) * E
    return num / den


def predict_error_kinetic(protocol: Protocol, T: float) -> float:
    """Error-propagated ``var(T)`` from one ``P^2`` sample, written for ``P0 = 0``."""
    if protocol.t <= 0:
        raise DomainError("kinetic estimator needs t > 0")
    law = protocol.law
    M, Delta = protocol.M, protocol.state.Delta
    s = protocol.t * law.rate(T)  # t / tau
    R = math.expm1(2 * s)
    return T**2 * (2 * R * M * T + Delta) ** 2 / (2 * (M * T * R + law.n * s * (2 * M * T - Delta)) ** 2)


def estimate_T_from_mean(samples, protocol: Protocol) -> float:
    """Invert ``mean_P(T) = P0 exp(-t Gamma T^n)`` at the sample mean.

    Raises
    ------
    OutOfRangeError
        The sample mean over ``P0`` falls outside ``(0, 1)``.
    """
    return float(_invert_mean(np.mean(np.asarray(samples, dtype=float)), protocol))


def _invert_mean(m_hat, protocol: Protocol, strict: bool = True):
    P0 = protocol.state.mean
    if P0 == 0:
        raise ZeroSignalError("mean momentum carries no temperature signal when P0 = 0")
    r = np.asarray(m_hat, dtype=float) / P0
    ok = (r > 0) & (r < 1)
    if strict and not np.all(ok):
        raise OutOfRangeError(f"sample mean ratio {r!r} is outside (0, 1)")
    with np.errstate(divide="ignore", invalid="ignore"):
        T_hat = (np.log(1 / r) / (protocol.t * protocol.law.Gamma)) ** (1.0 / protocol.law.n)
    return np.where(ok, T_hat, np.nan)


_BRACKET = (1e-6, 1e3)


def _monotone_branch(protocol: Protocol, bracket, T_hint):
    """Log-T interval containing ``T_hint`` on which the second moment is monotone."""
    lo, hi = bracket
    grid = np.geomspace(lo, hi, 4001)
    vals = protocol.second_moment(grid)
    diffs = np.sign(np.diff(vals))
    diffs[diffs == 0] = 1
    turns = np.nonzero(diffs[1:] != diffs[:-1])[0] + 1
    if turns.size == 0:
        return lo, hi, diffs[0]
    if T_hint is None:
        raise NoRootError(
            "second moment is not monotone in T on the bracket; pass T_hint to select a branch"
        )
    edges = np.concatenate(([0], turns, [grid.size - 1]))
    idx = np.searchsorted(grid, T_hint)
    seg = int(np.searchsorted(edges, idx, side="right")) - 1
    seg = min(max(seg, 0), edges.size - 2)
    a, b = edges[seg], edges[seg + 1]
    return grid[a], grid[b], diffs[min(a, diffs.size - 1)]


def invert_second_moment(s_hat, protocol: Protocol, bracket=_BRACKET, T_hint=None, iterations: int = 80):
    """Solve ``second_moment(T) = s_hat`` elementwise by bisection in ``log T``.

    Returns NaN where ``s_hat`` is outside the range of the monotone branch.
    80 halvings of the default bracket leave a relative width below 1e-16.
    """
    s_hat = np.asarray(s_hat, dtype=float)
    lo, hi, direction = _monotone_branch(protocol, bracket, T_hint)
    a = np.full(s_hat.shape, math.log(lo))
    b = np.full(s_hat.shape, math.log(hi))
    f_lo, f_hi = protocol.second_moment(lo), protocol.second_moment(hi)
    vmin, vmax = min(f_lo, f_hi), max(f_lo, f_hi)
    ok = (s_hat >= vmin) & (s_hat <= vmax)
    for _ in range(iterations):
        mid = 0.5 * (a + b)
        above = (protocol.second_moment(np.exp(mid)) - s_hat) * direction > 0
        b = np.where(above, mid, b)
        a = np.where(above, a, mid)
    return np.where(ok, np.exp(0.5 * (a + b)), np.nan)


def estimate_T_from_energy(samples, protocol: Protocol, bracket=_BRACKET, T_hint=None) -> float:
    """Match the sample mean of ``P^2`` to ``E[P^2](T)`` by bracketed root finding.

    Raises
    ------
    NoRootError
        The sample second moment lies outside the attainable range.
    """
    s_hat = float(np.mean(np.asarray(samples, dtype=float) ** 2))
    if s_hat <= 0:
        raise NoRootError("sample second moment must be positive")
    T_hat = float(invert_second_moment(s_hat, protocol, bracket, T_hint))
    if not math.isfinite(T_hat):
        raise NoRootError(f"no temperature reproduces second moment {s_hat:g}")
    return T_hat


@dataclass
class EstimationReport:
    estimator: str
    T_true: float
    trials: int
    samples_per_trial: int
    seed: int
    successful: int
    censored: int
    mean_T_hat: float
    mse: float
    mse_stderr: float
    predicted_var: float
    crb: float
    fisher_information: float

    @property
    def mse_over_crb(self) -> float:
        return self.mse / self.crb

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mse_over_crb"] = self.mse_over_crb
        return d


def mc_experiment(
    estimator,
    protocol: Protocol,
    T_true: float,
    trials: int,
    samples_per_trial: int,
    seed: int = 0,
    return_estimates: bool = False,
):
    """Monte Carlo test of an estimator against error propagation and the Cramer-Rao bound.

    Each trial draws ``samples_per_trial`` momenta and produces one estimate.
    Trials whose estimate is undefined are censored and counted, never clamped.
    ``crb`` and ``predicted_var`` are per-trial values, i.e. divided by
    ``samples_per_trial``.
    """
    estimator = Estimator.parse(estimator)
    if trials < 100:
        raise DomainError("mc_experiment needs at least 100 trials")
    if samples_per_trial < 1:
        raise DomainError("samples_per_trial must be >= 1")
    K = int(samples_per_trial)
    P = sample_trajectories(protocol.state, protocol.bath(T_true), trials * K, seed).reshape(trials, K)
    if estimator is Estimator.MOMENTUM_MEAN:
        T_hat = _invert_mean(P.mean(axis=1), protocol, strict=False)
        predicted = predict_error_momentum(protocol, T_true) / K
    else:
        s_hat = (P * P).mean(axis=1)
        T_hat = invert_second_moment(s_hat, protocol, T_hint=T_true)
        predicted = predict_error_kinetic(protocol, T_true) / K
    good = np.isfinite(T_hat)
    est = T_hat[good]
    if est.size == 0:
        raise OutOfRangeError("every trial was censored")
    err2 = (est - T_true) ** 2
    fi = float(
        gaussian_fisher(T_true, protocol.t, protocol.state.mean, protocol.state.variance,
                        protocol.M, protocol.law.Gamma, protocol.law.n)
    )
    report = EstimationReport(
        estimator=estimator.value,
        T_true=T_true,
        trials=trials,
        samples_per_trial=K,
        seed=int(seed),
        successful=int(good.sum()),
        censored=int((~good).sum()),
        mean_T_hat=float(est.mean()),
        mse=float(err2.mean()),
        mse_stderr=float(err2.std(ddof=1) / math.sqrt(err2.size)) if err2.size > 1 else math.nan,
        predicted_var=float(predicted),
        crb=1.0 / (K * fi) if fi > 0 else math.inf,
        fisher_information=fi,
    )
    if return_estimates:
        return report, T_hat
    return report
