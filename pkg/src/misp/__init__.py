"""Bayesian spatial monotone curves for snow and firn density."""

__version__ = "0.1.0"

from .basis import KernelFamily, KernelSpec, KnotConfig, design_matrix
from .errors import (
    ConfigurationError,
    DomainError,
    InputError,
    MispError,
    NumericalError,
    PlanError,
    SamplerFailure,
    ValidationError,
)
from .geodesy import CovarianceSpec, Distance, SiteLocation, Smoothness
from .inference import SamplerConfig, effective_sample_size, sample, split_rhat
from .inference.fitting import fit
from .model import (
    RHO_ICE,
    CoreRecord,
    DataModel,
    Dataset,
    ModelConfig,
    ParameterState,
    PriorSpec,
    SnowModel,
    VarianceMode,
)
from .predict import PredictionMode, PredictionRequest, extend_curve, predict_curves
from .scoring import CvPlan, crps_empirical, integrated_errors, make_plan, relative_crps, run_cv
from .simulate import SimulationSpec, draw_prior_state, generate_dataset, prior_curves
