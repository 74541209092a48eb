"""Heavy-impurity thermometry of a one-dimensional Bose gas.

Friction and diffusion of the impurity (:mod:`.core`), propagation of its
momentum distribution (:mod:`.propagator`), temperature Fisher information
(:mod:`.fisher`) and practical estimators (:mod:`.estimators`).
"""

__version__ = "0.1.0"

from .core import (
    FrictionLaw,
    PhysicalParams,
    ReflectionModel,
    Regime,
    classify_regime,
    diffusion_coefficient,
    friction_force_asymptotic,
    friction_force_integral,
    gamma_coefficient,
    relaxation_time,
)
from .propagator import (
    BathStage,
    GaussianMomentumState,
    GridDensity,
    compose_baths,
    density_at,
    evolve_fdm,
    evolve_gaussian,
    evolve_spectral,
    sample_trajectories,
)
from .fisher import (
    AsymptoticCase,
    FisherMatrix2,
    FisherReport,
    cramer_rao,
    crb_trace_bound,
    fi_asymptotic,
    fi_gaussian,
    fi_general_closed,
    fi_numeric,
    fisher_matrix_two_bath,
)
from .estimators import (
    EstimationReport,
    Estimator,
    Protocol,
    estimate_T_from_energy,
    estimate_T_from_mean,
    mc_experiment,
    predict_error_kinetic,
    predict_error_momentum,
    predict_moments,
)
