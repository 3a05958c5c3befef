"""Self-similar graph flows (MCF, surface diffusion, Willmore) as mild solutions.

Spectral periodic-residual solver around exact backgrounds, kernel
certification, scale-invariant norms and lambda-sweep stability experiments.
"""

from .errors import ConfigError, NumericalFailure, PropertyFailure, RegimeViolation, SelfsimError
from .fields import Field, Jet, jet, load_field, save_field, spectral_derivative
from .flows import FlowSpec, make_flow, rhs_exact
from .grid import Grid, make_grid
from .harness import (
    ExperimentConfig,
    cross_check_rescaling_paths,
    emit_outputs,
    load_config,
    load_fixture,
    run_global_stability,
    run_local_stability,
)
from .kernels import biharmonic_kernel, heat_kernel
from .norms import NormSpec, weighted_norms, xt_norm
from .semigroup import Schedule, Trajectory, apply_semigroup, integrate
from .similarity import ConeData, Perturbation, extract_profile, make_self_similar_data, rescale

__version__ = "0.1.0"

__all__ = [
    "ConeData", "ConfigError", "ExperimentConfig", "Field", "FlowSpec", "Grid", "Jet", "NormSpec",
    "NumericalFailure", "Perturbation", "PropertyFailure", "RegimeViolation", "Schedule",
    "SelfsimError", "Trajectory", "apply_semigroup", "biharmonic_kernel", "cross_check_rescaling_paths",
    "emit_outputs", "extract_profile", "heat_kernel", "integrate", "jet", "load_config", "load_field",
    "load_fixture", "make_flow", "make_grid", "make_self_similar_data", "rescale", "rhs_exact",
    "run_global_stability", "run_local_stability", "save_field", "spectral_derivative",
    "weighted_norms", "xt_norm",
]
