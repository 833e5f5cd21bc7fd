"""Functional wombling: boundary detection for spatially indexed functional data.

A BLUP of the normalised functional wombling measure with Cholesky-permutation
bootstrap pseudo-p values, and a Bayesian counterpart on truncated basis
loadings with Metropolis-Hastings over the covariance parameters.
"""

from .bayes import BayesConfig, BayesReport, ChainConfig, HyperParams, InverseGammaPrior, functional_bayes_womble, mh_sample
from .bootstrap import BootstrapConfig, BootstrapOutcome, pseudo_p, pseudo_p_many
from .covmodel import (
    CovarianceModel,
    EmpiricalCloud,
    FitOptions,
    GaussianComponent,
    empirical_covariogram_cloud,
    empirical_variogram_cloud,
    fit,
)
from .errors import ChainStuck, FitFailed, InputError, WombleError
from .fdata import FunctionalSample, Grid, project, project_values
from .geometry import Curve, QuadratureRule, average_flux
from .womble import SpatialDataset, WombleBLUP, predict_measure, solve_weights

__version__ = "0.1.0"

__all__ = [
    "BayesConfig",
    "BayesReport",
    "BootstrapConfig",
    "BootstrapOutcome",
    "ChainConfig",
    "ChainStuck",
    "CovarianceModel",
    "Curve",
    "EmpiricalCloud",
    "FitFailed",
    "FitOptions",
    "FunctionalSample",
    "GaussianComponent",
    "Grid",
    "HyperParams",
    "InputError",
    "InverseGammaPrior",
    "QuadratureRule",
    "SpatialDataset",
    "WombleBLUP",
    "WombleError",
    "average_flux",
    "empirical_covariogram_cloud",
    "empirical_variogram_cloud",
    "fit",
    "functional_bayes_womble",
    "mh_sample",
    "predict_measure",
    "project",
    "project_values",
    "pseudo_p",
    "pseudo_p_many",
    "solve_weights",
]
