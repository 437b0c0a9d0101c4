"""Sequential kernel estimation of the drift of an ergodic diffusion at a point.

Modules
-------
models, sde, pathio
    Model catalog, path simulation (exact OU / Euler-Maruyama) and persistence.
holder
    Weak Hoelder modulus and the local perturbation family.
oracle
    Invariant density, ergodic means, moment bounds and the deviation statistic.
estimator
    Schedule, density pre-estimate, stopping rule and the sequential estimate.
risk
    Monte Carlo risk, the nonasymptotic bound and normalized-risk studies.
"""

__version__ = "0.1.0"

from .models import (ModelTheta, ModelViolationError, ModelViolationWarning, make_model,
                     model_from_spec)
from .sde import PathChunk, PathSample, euler_maruyama, iter_path_chunks, simulate_path
from .pathio import load_path, load_path_csv, save_path, save_path_csv
from .holder import (HolderParams, PerturbationFamily, build_perturbation, omega_modulus,
                     perturbation_profile, weak_holder_membership)
from .oracle import (InvariantDensity, deviation_statistic, ergodic_mean, invariant_density,
                     moment_bound, moment_constants, window_indicator)
from .estimator import (EstimationOutcome, EstimatorSchedule, SequentialEstimator,
                        decompose_error, density_preestimate, estimate_drift, make_schedule,
                        stopping_time, threshold, truncate_density)
from .risk import (RiskReport, efficiency_constant, efficiency_study, minimax_rate,
                   normal_abs_moment, pointwise_risk_mc, upper_bound_U)
