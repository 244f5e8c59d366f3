"""Simulation and maximum likelihood drift estimation for fast/slow SDE systems."""
from ._kernels import BACKEND
from .averaging import (InvariantAvgOptions, LimitPath, averaged_drift, invariant_average,
                        solve_limit_ode, trapezoid)
from .errors import (ConfigError, DegenerateNormalEquations, DiscretizationWarning, GridMismatch,
                     MultiscaleError, NonFiniteState, NonPositiveDefinite, RegimeWarning,
                     SingularDiffusion, StderrTooLarge)
from .estimate import (EstimatorResult, FisherInfo, OptimizerOptions, confidence_interval,
                       fisher_information, mle, normal_quantile, quasi_mle)
from .experiment import ExperimentConfig, McReport, emit_report, run_monte_carlo
from .likelihood import LikelihoodValue, PathTerms, limit_likelihood, log_likelihood, quasi_log_likelihood
from .model import (EpsilonPair, FamilySpec, MultiscaleModel, ProbeConfig, ValidationReport,
                    available_models, family_model, get_model, kappa, register_model, validate_model)
from .simulate import TimeGrid, Trajectory, euler_maruyama, replay, simulate_frozen_fast

__version__ = "0.1.0"
