"""Time evolution of the impurity momentum distribution.

Four independent routes solve the same linear Fokker-Planck equation

    df/dt = d/dP [ (P/tau) f + (M T/tau) df/dP ]

closed-form Gaussian update, Hermite eigen-expansion, Chang-Cooper finite
differences, and exact Ornstein-Uhlenbeck sampling.  A Gaussian state is
stored as (mean, variance); the initial width parameter ``Delta`` used in the
literature is ``2 * variance``.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import sparse
from scipy.sparse.linalg import splu

from .core import DomainError, FrictionLaw, relaxation_time
from .errors import DeltaStateError, GridTooNarrowError, TruncationNotConvergedError

__all__ = [
    "GaussianMomentumState",
    "BathStage",
    "GridDensity",
    "evolve_gaussian",
    "density_at",
    "gaussian_grid",
    "default_grid",
    "hermite_functions",
    "spectral_coefficients",
    "evolve_spectral",
    "evolve_fdm",
    "sample_trajectories",
    "compose_baths",
]


@dataclass(frozen=True)
class GaussianMomentumState:
    """Gaussian momentum distribution; ``variance == 0`` is the fixed-momentum state."""

    mean: float
    variance: float = 0.0

    def __post_init__(self):
        if not self.variance >= 0:
            raise DomainError(f"variance must be >= 0, got {self.variance!r}")

    @classmethod
    def from_delta(cls, P0: float, Delta: float) -> "GaussianMomentumState":
        """Build from the initial profile ``exp(-(P-P0)^2/Delta)/sqrt(pi Delta)``."""
        return cls(mean=P0, variance=Delta / 2)

    @property
    def Delta(self) -> float:
        return 2 * self.variance

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class BathStage:
    """Contact with one gas at temperature ``T`` for a time ``duration``.

    ``M`` is the impurity mass; it fixes the equilibrium variance ``M*T``.
    """

    T: float
    law: FrictionLaw
    duration: float
    M: float = 1.0

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError(f"bath temperature must be positive, got {self.T!r}")
        if not self.duration >= 0:
            raise DomainError(f"bath duration must be >= 0, got {self.duration!r}")
        if not self.M > 0:
            raise DomainError(f"impurity mass must be positive, got {self.M!r}")

    @classmethod
    def at_tau(cls, T: float, law: FrictionLaw, M: float = 1.0, multiple: float = 1.0) -> "BathStage":
        return cls(T=T, law=law, duration=multiple * relaxation_time(law, T), M=M)

    @property
    def tau(self) -> float:
        return relaxation_time(self.law, self.T)

    @property
    def equilibrium_variance(self) -> float:
        return self.M * self.T

    @property
    def drift_rate(self) -> float:
        return 1.0 / self.tau

    @property
    def diffusion_half(self) -> float:
        """``D/2 = M T / tau``."""
        return self.M * self.T / self.tau


@dataclass
class GridDensity:
    P: np.ndarray
    f: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        if self.P.shape != self.f.shape or self.P.ndim != 1 or self.P.size < 3:
            raise DomainError("grid and density must be 1-D arrays of equal length >= 3")
        steps = np.diff(self.P)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise DomainError("grid must be uniform")

    @property
    def h(self) -> float:
        return float(self.P[1] - self.P[0])

    def mass(self) -> float:
        return float(self.f.sum() * self.h)

    def mean(self) -> float:
        return float((self.P * self.f).sum() * self.h / self.mass())

    def variance(self) -> float:
        mu = self.mean()
        return float(((self.P - mu) ** 2 * self.f).sum() * self.h / self.mass())

    def l1_distance(self, other) -> float:
        g = other.f if isinstance(other, GridDensity) else np.asarray(other, dtype=float)
        return float(np.abs(self.f - g).sum() * self.h)

    def sup_distance(self, other) -> float:
        g = other.f if isinstance(other, GridDensity) else np.asarray(other, dtype=float)
        return float(np.max(np.abs(self.f - g)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("P,f\n")
        for p, v in zip(self.P, self.f):
            buf.write(f"{p!r},{v!r}\n")
        return buf.getvalue()


def _decay(bath: BathStage):
    """Return ``(e^{-t/tau}, 1 - e^{-2t/tau})`` computed without cancellation."""
    s = bath.duration / bath.tau
    return math.exp(-s), -math.expm1(-2 * s)


def evolve_gaussian(state: GaussianMomentumState, bath: BathStage) -> GaussianMomentumState:
    """Exact Gaussian solution after time ``bath.duration``."""
    a, one_minus_a2 = _decay(bath)
    mean = state.mean * a
    variance = bath.equilibrium_variance * one_minus_a2 + state.variance * a * a
    return GaussianMomentumState(mean=mean, variance=variance)


def compose_baths(state: GaussianMomentumState, stages: Sequence[BathStage]) -> GaussianMomentumState:
    stages = list(stages)
    if not stages:
        raise DomainError("need at least one bath stage")
    for stage in stages:
        state = evolve_gaussian(state, stage)
    return state


def density_at(state: GaussianMomentumState, P):
    if state.variance <= 0:
        raise DeltaStateError("fixed-momentum state has no pointwise density")
    P = np.asarray(P, dtype=float)
    f = np.exp(-((P - state.mean) ** 2) / (2 * state.variance)) / math.sqrt(2 * math.pi * state.variance)
    return float(f) if f.ndim == 0 else f


def default_grid(state: GaussianMomentumState, bath: BathStage, n_points: int = 2048) -> np.ndarray:
    half_width = abs(state.mean) + 10 * math.sqrt(max(state.variance, bath.equilibrium_variance))
    return np.linspace(-half_width, half_width, n_points)


def gaussian_grid(state: GaussianMomentumState, P: np.ndarray) -> GridDensity:
    return GridDensity(P=P, f=density_at(state, P), meta={"method": "gaussian"})


# --- Hermite eigen-expansion -------------------------------------------------


def _hermite_polys(y: np.ndarray, n_modes: int) -> np.ndarray:
    """Orthonormal Hermite polynomials h_n with  int e^{-y^2} h_m h_n dy = delta_mn."""
    y = np.asarray(y, dtype=float)
    out = np.empty((n_modes,) + y.shape)
    out[0] = math.pi**-0.25
    if n_modes > 1:
        out[1] = math.sqrt(2.0) * y * out[0]
    for k in range(1, n_modes - 1):
        out[k + 1] = math.sqrt(2.0 / (k + 1)) * y * out[k] - math.sqrt(k / (k + 1)) * out[k - 1]
    return out


def hermite_functions(y, n_modes: int) -> np.ndarray:
    """Oscillator eigenfunctions ``psi_n(y) = e^{-y^2/2} h_n(y)``, shape ``(n_modes, len(y))``.

    The recurrence runs on the functions themselves so nothing overflows for
    large ``n``.
    """
    y = np.asarray(y, dtype=float)
    out = np.empty((n_modes,) + y.shape)
    out[0] = math.pi**-0.25 * np.exp(-0.5 * y * y)
    if n_modes > 1:
        out[1] = math.sqrt(2.0) * y * out[0]
    for k in range(1, n_modes - 1):
        out[k + 1] = math.sqrt(2.0 / (k + 1)) * y * out[k] - math.sqrt(k / (k + 1)) * out[k - 1]
    return out


def spectral_coefficients(state: GaussianMomentumState, bath: BathStage, n_modes: int) -> np.ndarray:
    """Expansion coefficients of the initial density in the equilibrium eigenbasis.

    In the scaled momentum ``y = P / sqrt(2 M T)`` the density is written as
    ``e^{-y^2} sum_n A_n h_n(y)``, so ``A_n = int f(y) h_n(y) dy``.  For a
    Gaussian ``f`` the integral is computed exactly by Gauss-Hermite
    quadrature centred on the state.
    """
    if state.variance <= 0:
        raise DeltaStateError("spectral expansion needs a state with positive variance")
    if n_modes < 1:
        raise DomainError("need at least one mode")
    scale = math.sqrt(2 * bath.equilibrium_variance)
    y0 = state.mean / scale
    width = math.sqrt(state.variance / bath.equilibrium_variance)  # y = y0 + width * u
    nodes, weights = hermgauss(n_modes // 2 + 16)
    h = _hermite_polys(y0 + width * nodes, n_modes)
    return h @ weights / math.sqrt(math.pi)


def evolve_spectral(
    state: GaussianMomentumState,
    bath: BathStage,
    n_modes: int = 64,
    grid: np.ndarray | None = None,
    tol: float = 1e-8,
) -> GridDensity:
    """Reconstruct ``f(t, P)`` from the damped eigen-expansion ``sum A_n e^{-n t/tau} psi_n``.

    Raises
    ------
    TruncationNotConvergedError
        The last two retained modes contribute more than ``tol`` of the peak density.
    """
    if n_modes < 8:
        raise DomainError("spectral propagation needs n_modes >= 8")
    P = default_grid(state, bath) if grid is None else np.asarray(grid, dtype=float)
    scale = math.sqrt(2 * bath.equilibrium_variance)
    y = P / scale
    A = spectral_coefficients(state, bath, n_modes)
    damping = np.exp(-np.arange(n_modes) * (bath.duration / bath.tau))
    c = A * damping
    psi = hermite_functions(y, n_modes)
    envelope = np.exp(-0.5 * y * y) / scale
    terms = c[:, None] * psi
    f = envelope * terms.sum(axis=0)
    tail = float(np.max(np.abs(envelope * terms[-2:]).max(axis=1)))
    peak = float(np.max(np.abs(f)))
    if tail > tol * peak:
        raise TruncationNotConvergedError(
            f"last modes contribute {tail / peak:.2e} of the peak with {n_modes} modes",
            n_modes=n_modes,
        )
    return GridDensity(P=P, f=f, meta={"method": "spectral", "n_modes": n_modes, "coefficients": c})


# --- Chang-Cooper finite differences -----------------------------------------


def _chang_cooper_operator(P: np.ndarray, bath: BathStage) -> sparse.csc_matrix:
    """Matrix ``L`` of the semi-discrete system ``df/dt = L f`` with zero-flux ends."""
    h = P[1] - P[0]
    a = bath.drift_rate
    d = bath.diffusion_half
    P_half = 0.5 * (P[1:] + P[:-1])
    B = a * P_half
    w = h * B / d
    # delta = 1/w - 1/(e^w - 1), with the w -> 0 limit 1/2
    small = np.abs(w) < 1e-8
    w_safe = np.where(small, 1.0, w)
    delta = np.where(small, 0.5 - w / 12, 1.0 / w_safe - 1.0 / np.expm1(w_safe))
    # flux J_{j+1/2} = c_plus f_{j+1} + c_minus f_j  (flux toward -P sign convention)
    c_plus = B * (1 - delta) + d / h
    c_minus = B * delta - d / h
    N = P.size
    main = np.zeros(N)
    upper = np.zeros(N - 1)
    lower = np.zeros(N - 1)
    # df_j/dt = (J_{j+1/2} - J_{j-1/2}) / h
    main[:-1] += c_minus / h
    upper += c_plus / h
    main[1:] -= c_plus / h
    lower -= c_minus / h
    return sparse.diags([lower, main, upper], [-1, 0, 1], format="csc")


def evolve_fdm(
    initial: GridDensity,
    bath: BathStage,
    dt: float | None = None,
    boundary_tol: float = 1e-12,
    startup_steps: int = 4,
) -> GridDensity:
    """Advance a grid density with Chang-Cooper fluxes and Crank-Nicolson steps.

    The first step is replaced by ``startup_steps`` backward-Euler substeps to
    damp the Crank-Nicolson oscillation of non-smooth data.  Fluxes vanish at
    both ends, so total mass changes only by round-off.

    Raises
    ------
    GridTooNarrowError
        The density at either end of the grid exceeds ``boundary_tol``.
    """
    P, f = initial.P, initial.f.copy()
    _check_boundary(f, boundary_tol, "initial")
    t_end = bath.duration
    if dt is None:
        dt = bath.tau / 2000
    if dt <= 0:
        raise DomainError("time step must be positive")
    n_steps = max(1, math.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    h = initial.h
    diagnostics = {
        "method": "fdm",
        "n_steps": n_steps,
        "dt": t_end / n_steps if n_steps else 0.0,
        "diffusion_number": bath.diffusion_half * (t_end / max(n_steps, 1)) / h**2,
        "drift_courant": bath.drift_rate * float(np.max(np.abs(P))) * (t_end / max(n_steps, 1)) / h,
    }
    if n_steps == 0:
        return GridDensity(P=P, f=f, meta=diagnostics)
    step = t_end / n_steps
    L = _chang_cooper_operator(P, bath)
    eye = sparse.identity(P.size, format="csc")
    mass0 = f.sum() * h
    max_drift = 0.0

    sub = step / startup_steps
    be = splu((eye - sub * L).tocsc())
    for _ in range(startup_steps):
        f = be.solve(f)
    cn_lhs = splu((eye - 0.5 * step * L).tocsc())
    cn_rhs = (eye + 0.5 * step * L).tocsr()
    prev = mass0
    for _ in range(n_steps - 1):
        f = cn_lhs.solve(cn_rhs @ f)
        m = f.sum() * h
        max_drift = max(max_drift, abs(m - prev))
        prev = m
    _check_boundary(f, boundary_tol, "final")
    diagnostics.update(
        mass_drift_per_step=max_drift,
        mass_error=abs(f.sum() * h - mass0),
        min_density=float(f.min()),
    )
    return GridDensity(P=P, f=f, meta=diagnostics)


def _check_boundary(f: np.ndarray, tol: float, when: str) -> None:
    edge = max(abs(f[0]), abs(f[-1]))
    if edge > tol:
        raise GridTooNarrowError(f"{when} density at grid edge is {edge:.2e} > {tol:g}", edge=edge)


# --- exact Ornstein-Uhlenbeck sampling ---------------------------------------

_BLOCK = 1 << 16


def _block_samples(state, a, sigma_t, seed, block, size):
    rng = np.random.Generator(np.random.Philox(key=[seed, block]))
    z = rng.standard_normal((2, size))
    start = state.mean + (math.sqrt(state.variance) * z[0] if state.variance > 0 else 0.0)
    return start * a + sigma_t * z[1]


def sample_trajectories(
    state: GaussianMomentumState,
    bath: BathStage,
    n_traj: int,
    seed: int = 0,
    workers: int | None = None,
) -> np.ndarray:
    """Draw ``P(t)`` for ``n_traj`` independent impurities in one exact step.

    ``P(t) = P(0) e^{-t/tau} + xi sqrt(M T (1 - e^{-2t/tau}))``.  Trajectories
    are grouped in fixed blocks of 65536, each with its own Philox stream keyed
    by ``(seed, block)``, so output is identical for any ``workers``.
    """
    if n_traj < 1:
        raise DomainError("n_traj must be >= 1")
    a, one_minus_a2 = _decay(bath)
    sigma_t = math.sqrt(bath.equilibrium_variance * one_minus_a2)
    sizes = [min(_BLOCK, n_traj - i) for i in range(0, n_traj, _BLOCK)]
    jobs = [(state, a, sigma_t, int(seed), b, s) for b, s in enumerate(sizes)]
    if workers and workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda j: _block_samples(*j), jobs))
    else:
        parts = [_block_samples(*j) for j in jobs]
    return np.concatenate(parts)


def sample_through(
    state: GaussianMomentumState, stages: Iterable[BathStage], n_traj: int, seed: int = 0
) -> np.ndarray:
    """Monte Carlo counterpart of :func:`compose_baths`: push samples through each stage."""
    stages = list(stages)
    if not stages:
        raise DomainError("need at least one bath stage")
    P = sample_trajectories(state, stages[0], n_traj, seed)
    for i, stage in enumerate(stages[1:], start=1):
        a, one_minus_a2 = _decay(stage)
        rng = np.random.Generator(np.random.Philox(key=[int(seed), 1 << 32 | i]))
        P = P * a + math.sqrt(stage.equilibrium_variance * one_minus_a2) * rng.standard_normal(P.size)
    return P
