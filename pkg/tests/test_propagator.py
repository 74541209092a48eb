import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from impurity_thermometry.core import FrictionLaw
from impurity_thermometry.errors import DeltaStateError, DomainError, GridTooNarrowError, TruncationNotConvergedError
from impurity_thermometry.propagator import (
    BathStage,
    GaussianMomentumState,
    GridDensity,
    compose_baths,
    default_grid,
    density_at,
    evolve_fdm,
    evolve_gaussian,
    evolve_spectral,
    gaussian_grid,
    hermite_functions,
    sample_through,
    sample_trajectories,
    spectral_coefficients,
)

E = math.e


# --- evolve_gaussian ---------------------------------------------------------


def test_zero_duration_is_identity(reference_state, law4):
    bath = BathStage(T=0.7, law=law4, duration=0.0)
    assert evolve_gaussian(reference_state, bath) == reference_state


def test_long_time_reaches_equilibrium(reference_state, law4):
    bath = BathStage.at_tau(0.5, law4, M=2.0, multiple=50)
    out = evolve_gaussian(reference_state, bath)
    assert abs(out.mean) <= 1e-15 * abs(reference_state.mean)
    assert out.variance == pytest.approx(1.0, rel=1e-12)


def test_delta_start_at_tau(law4):
    bath = BathStage.at_tau(0.5, law4, M=1.0)
    out = evolve_gaussian(GaussianMomentumState(1.0, 0.0), bath)
    assert out.mean == pytest.approx(0.367879, abs=1e-6)
    assert out.variance == pytest.approx(0.432332, abs=1e-6)


def test_variance_matches_delta_prime_form(law4):
    state = GaussianMomentumState.from_delta(0.3, 0.9)
    bath = BathStage(T=0.8, law=law4, duration=1.7, M=1.3)
    a2 = math.exp(-2 * bath.duration / bath.tau)
    Delta_p = state.Delta / (2 * bath.M * bath.T)
    assert evolve_gaussian(state, bath).variance == pytest.approx(bath.M * bath.T * (1 - a2 * (1 - Delta_p)), rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(
    P0=st.floats(-5, 5),
    V=st.floats(0, 5),
    T=st.floats(0.05, 3),
    t1=st.floats(0, 5),
    t2=st.floats(0, 5),
)
def test_semigroup(P0, V, T, t1, t2):
    law = FrictionLaw(1.3, 2)
    s = GaussianMomentumState(P0, V)
    two = compose_baths(s, [BathStage(T, law, t1), BathStage(T, law, t2)])
    one = evolve_gaussian(s, BathStage(T, law, t1 + t2))
    assert two.mean == pytest.approx(one.mean, rel=1e-12, abs=1e-14)
    assert two.variance == pytest.approx(one.variance, rel=1e-12, abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(V=st.floats(0, 10), T=st.floats(0.1, 2), s=st.floats(0, 4), P0=st.floats(-3, 3))
def test_variance_contracts_towards_equilibrium(V, T, s, P0):
    law = FrictionLaw(1.0, 4)
    bath = BathStage.at_tau(T, law, M=1.5, multiple=s)
    out = evolve_gaussian(GaussianMomentumState(P0, V), bath)
    MT = 1.5 * T
    assert out.variance - MT == pytest.approx((V - MT) * math.exp(-2 * s), abs=1e-12)
    assert out.mean == pytest.approx(P0 * math.exp(-s), abs=1e-14)


def test_compose_single_stage(reference_state, unit_bath):
    assert compose_baths(reference_state, [unit_bath]) == evolve_gaussian(reference_state, unit_bath)


def test_compose_requires_stages(reference_state):
    with pytest.raises(DomainError):
        compose_baths(reference_state, [])


def test_two_bath_matches_two_stage_formula_and_monte_carlo():
    law = FrictionLaw(1.0, 4)
    T = 0.1
    stages = [BathStage.at_tau(T, law), BathStage.at_tau(T, law)]
    out = compose_baths(GaussianMomentumState(1.0, 0.0), stages)
    assert out.mean == pytest.approx(math.exp(-2), rel=1e-14)
    Delta1 = 2 * T * (1 - math.exp(-2))
    expected_var = T * (1 - math.exp(-2) * (1 - Delta1 / (2 * T)))
    assert out.variance == pytest.approx(expected_var, rel=1e-14)
    P = sample_through(GaussianMomentumState(1.0, 0.0), stages, 400_000, seed=11)
    n = P.size
    assert abs(P.mean() - out.mean) < 4 * math.sqrt(out.variance / n)
    assert abs(P.var() - out.variance) < 4 * out.variance * math.sqrt(2 / n)


# --- density_at --------------------------------------------------------------


def test_density_stationary_peak():
    assert density_at(GaussianMomentumState(0.0, 1.0), 0.0) == pytest.approx(0.398942, abs=1e-6)


def test_density_symmetric_and_normalised():
    s = GaussianMomentumState(0.7, 0.3)
    x = np.linspace(0, 3, 17)
    np.testing.assert_allclose(density_at(s, 0.7 + x), density_at(s, 0.7 - x), rtol=1e-13)
    total = integrate.quad(lambda p: density_at(s, p), -np.inf, np.inf, epsabs=0, epsrel=1e-12)[0]
    assert total == pytest.approx(1.0, abs=1e-8)


def test_density_of_delta_state_rejected():
    with pytest.raises(DeltaStateError):
        density_at(GaussianMomentumState(1.0, 0.0), 1.0)


# --- spectral ----------------------------------------------------------------


def test_hermite_functions_orthonormal():
    y, w = np.polynomial.hermite.hermgauss(80)
    # psi_m psi_n = e^{-y^2} h_m h_n; weight e^{-y^2} is supplied by the rule
    psi = hermite_functions(y, 40) * np.exp(0.5 * y * y)
    gram = (psi * w) @ psi.T
    np.testing.assert_allclose(gram, np.eye(40), atol=1e-10)


def test_spectral_stationary_input_has_only_ground_mode(law4):
    state = GaussianMomentumState(0.0, 1.0)
    bath = BathStage.at_tau(1.0, law4, multiple=0.5)
    A = spectral_coefficients(state, bath, 32)
    assert abs(A[0]) > 0.1
    assert np.max(np.abs(A[1:])) < 1e-13
    P = default_grid(state, bath)
    out = evolve_spectral(state, bath, 32, grid=P)
    assert out.sup_distance(gaussian_grid(state, P)) < 1e-10


def test_spectral_matches_closed_form(reference_state, unit_bath):
    P = default_grid(reference_state, unit_bath)
    out = evolve_spectral(reference_state, unit_bath, 64, grid=P)
    ref = gaussian_grid(evolve_gaussian(reference_state, unit_bath), P)
    assert out.sup_distance(ref) < 1e-6


def test_spectral_mode_decay_matches_evolved_state(reference_state, law4):
    # coefficients of the exactly evolved Gaussian equal the damped initial ones
    bath = BathStage.at_tau(1.0, law4, multiple=0.7)
    A0 = spectral_coefficients(reference_state, bath, 40)
    At = spectral_coefficients(evolve_gaussian(reference_state, bath), bath, 40)
    np.testing.assert_allclose(At, A0 * np.exp(-np.arange(40) * 0.7), atol=1e-13)


def test_spectral_truncation_error(reference_state, law4):
    bath = BathStage.at_tau(1.0, law4, multiple=0.01)
    with pytest.raises(TruncationNotConvergedError):
        evolve_spectral(reference_state, bath, 16)


def test_spectral_rejects_delta_and_few_modes(law4):
    bath = BathStage.at_tau(1.0, law4)
    with pytest.raises(DeltaStateError):
        evolve_spectral(GaussianMomentumState(1.0, 0.0), bath)
    with pytest.raises(DomainError):
        evolve_spectral(GaussianMomentumState(1.0, 0.2), bath, 4)


# --- finite differences ------------------------------------------------------


def test_fdm_keeps_stationary_state(law4):
    state = GaussianMomentumState(0.0, 1.0)
    bath = BathStage.at_tau(1.0, law4, multiple=10)
    P = default_grid(state, bath)
    start = gaussian_grid(state, P)
    out = evolve_fdm(start, bath)
    assert out.l1_distance(start) < 1e-6


def test_fdm_matches_closed_form(reference_state, unit_bath):
    P = default_grid(reference_state, unit_bath)
    out = evolve_fdm(gaussian_grid(reference_state, P), unit_bath)
    ref = gaussian_grid(evolve_gaussian(reference_state, unit_bath), P)
    assert out.l1_distance(ref) < 1e-4
    assert abs(out.mass() - 1) < 1e-6
    assert out.meta["mass_drift_per_step"] < 1e-9
    assert out.meta["min_density"] >= 0


def test_fdm_mass_conserved_at_every_step(reference_state, law4):
    bath = BathStage.at_tau(1.0, law4, multiple=0.001)
    P = default_grid(reference_state, bath, 512)
    g = gaussian_grid(reference_state, P)
    for _ in range(20):
        g = evolve_fdm(g, bath, dt=bath.duration / 5)
        assert abs(g.mass() - 1) < 1e-6


def test_fdm_semigroup(reference_state, law4):
    P = default_grid(reference_state, BathStage.at_tau(1.0, law4))
    start = gaussian_grid(reference_state, P)
    half = BathStage.at_tau(1.0, law4, multiple=0.5)
    full = BathStage.at_tau(1.0, law4, multiple=1.0)
    two = evolve_fdm(evolve_fdm(start, half, dt=full.tau / 2000), half, dt=full.tau / 2000)
    one = evolve_fdm(start, full)
    assert two.l1_distance(one) < 1e-4


def test_fdm_grid_too_narrow(reference_state, unit_bath):
    P = np.linspace(-1, 1, 201)
    with pytest.raises(GridTooNarrowError):
        evolve_fdm(gaussian_grid(reference_state, P), unit_bath)


def test_grid_density_validation():
    with pytest.raises(DomainError):
        GridDensity(P=[0, 1, 3], f=[0, 0, 0])
    g = GridDensity(P=[0.0, 0.5, 1.0], f=[0.0, 2.0, 0.0])
    assert g.h == 0.5 and g.mass() == 1.0
    assert g.to_csv().splitlines()[0] == "P,f"


# --- sampling ----------------------------------------------------------------


def test_samples_fixed_at_t0(law4):
    out = sample_trajectories(GaussianMomentumState(1.3, 0.0), BathStage(0.5, law4, 0.0), 1000, seed=1)
    assert np.all(out == 1.3)


def test_sample_moments_and_ks(law4):
    bath = BathStage.at_tau(0.5, law4)
    n = 1_000_000
    P = sample_trajectories(GaussianMomentumState(1.0, 0.0), bath, n, seed=7)
    var = 0.5 * (1 - math.exp(-2))
    assert abs(P.mean() - math.exp(-1)) < 3 * math.sqrt(var / n)
    assert abs(P.var(ddof=1) - var) < 3 * var * math.sqrt(2 / (n - 1))
    ks = stats.kstest(P, "norm", args=(math.exp(-1), math.sqrt(var)))
    assert ks.statistic < 1.63 / math.sqrt(n)


def test_sampling_deterministic_across_workers(reference_state, unit_bath):
    a = sample_trajectories(reference_state, unit_bath, 200_001, seed=42)
    b = sample_trajectories(reference_state, unit_bath, 200_001, seed=42, workers=4)
    assert np.array_equal(a, b)
    c = sample_trajectories(reference_state, unit_bath, 200_001, seed=43)
    assert not np.array_equal(a, c)


def test_sampling_rejects_empty(reference_state, unit_bath):
    with pytest.raises(DomainError):
        sample_trajectories(reference_state, unit_bath, 0)


# --- cross-method properties -------------------------------------------------


@pytest.mark.parametrize("multiple", [0.1, 1.0, 3.0])
def test_four_way_agreement(reference_state, law4, multiple):
    bath = BathStage.at_tau(1.0, law4, multiple=multiple)
    P = default_grid(reference_state, bath)
    ref = gaussian_grid(evolve_gaussian(reference_state, bath), P)
    assert evolve_spectral(reference_state, bath, 160, grid=P).sup_distance(ref) < 1e-6
    assert evolve_fdm(gaussian_grid(reference_state, P), bath).l1_distance(ref) < 1e-4
    final = evolve_gaussian(reference_state, bath)
    n = 200_000
    samples = sample_trajectories(reference_state, bath, n, seed=3)
    ks = stats.kstest(samples, "norm", args=(final.mean, final.std))
    assert ks.pvalue > 0.01


def test_equipartition_every_method(reference_state, law4):
    bath = BathStage.at_tau(1.0, law4, multiple=20)
    MT = bath.equilibrium_variance
    P = default_grid(reference_state, bath)
    assert evolve_gaussian(reference_state, bath).variance == pytest.approx(MT, rel=1e-3)
    assert evolve_spectral(reference_state, bath, grid=P).variance() == pytest.approx(MT, rel=1e-3)
    assert evolve_fdm(gaussian_grid(reference_state, P), bath, dt=bath.tau / 200).variance() == pytest.approx(MT, rel=1e-3)
    assert sample_trajectories(reference_state, bath, 4_000_000, seed=5).var() == pytest.approx(MT, rel=1e-3 + 5 * math.sqrt(2 / 4e6))
