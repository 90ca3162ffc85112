"""Transformation posteriors and ensemble fields for discrete probabilistic registration."""
from ._backend import NAME as BACKEND, set_num_threads
from .core import (
    DisplacementSet,
    EnsembleField,
    Image,
    PosteriorField,
    ScalarField,
    aggregate,
    entropy,
    weighted_mean_and_variance,
    weighted_quantile,
)
from .ensemble import (
    ContourSet,
    ensemble_entropy_map,
    ensemble_mode,
    ensemble_variance_map,
    exceedance_map,
    iso_contours,
    label_probability_map,
    mode_mismatch_map,
    pushforward_label,
    pushforward_scalar,
    pushforward_vector,
)
from .errors import (
    ConvergenceError,
    EmptyCellError,
    EnsembleRegError,
    InvalidArgumentError,
    InvalidDistributionError,
)
from .interpret import (
    DisplacementField,
    covariance_frobenius_map,
    displacement_iqr_map,
    displacement_moments,
    entropy_map,
    mode_transformation,
    warp_by_mode,
)
from .rwir import RwirConfig, data_likelihood, random_walker_regularize, register

__version__ = "0.1.0"
