"""Bayesian models of mixed continuous and binary multivariate functional data."""

from .data import (
    FunctionalDataset,
    ResponseDeclaration,
    ResponseKind,
    ScalingInfo,
    SubjectCovariates,
    load_covariates,
    load_dataset,
    write_dataset,
)
from .latent_cov import LatentCovarianceEstimate, estimate_latent_covariance
from .mfpca import EigenSystem, FpcaBasis, TruncationRule, eigendecompose, truncate
from .model import FittedModel, FpcaEffects, ModelConfig, PredeterminedEffects, fit_model
from .posterior import (
    PosteriorSummary,
    PredictionResult,
    compute_coverage_and_length,
    compute_dic,
    compute_mise,
    compute_mspe,
    predict_heldout,
)
from .sampler import ChainConfig, PosteriorDraws, PriorConfig, run_gibbs
from .simulator import ModelVariant, SimulationConfig, generate_dataset, run_study
from .smoothing import GridSpec, SmootherConfig
from .utils import ConfigError, DataError, LatentFDAError, NumericalError

__all__ = [
    "ChainConfig",
    "ConfigError",
    "DataError",
    "EigenSystem",
    "FittedModel",
    "FpcaBasis",
    "FpcaEffects",
    "FunctionalDataset",
    "GridSpec",
    "LatentCovarianceEstimate",
    "LatentFDAError",
    "ModelConfig",
    "ModelVariant",
    "NumericalError",
    "PosteriorDraws",
    "PosteriorSummary",
    "PredeterminedEffects",
    "PredictionResult",
    "PriorConfig",
    "ResponseDeclaration",
    "ResponseKind",
    "ScalingInfo",
    "SimulationConfig",
    "SmootherConfig",
    "SubjectCovariates",
    "TruncationRule",
    "compute_coverage_and_length",
    "compute_dic",
    "compute_mise",
    "compute_mspe",
    "eigendecompose",
    "estimate_latent_covariance",
    "fit_model",
    "generate_dataset",
    "load_covariates",
    "load_dataset",
    "predict_heldout",
    "run_gibbs",
    "run_study",
    "truncate",
    "write_dataset",
]
