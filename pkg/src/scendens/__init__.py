"""Joint density estimation of scenario parameters.

Fits and compares three generative model families over tabular data:
Gaussian mixtures on the raw values, and Gaussian copula or Gaussian
mixture copula models over shared KDE marginals. Models share a common
density/sample contract and JSON persistence; evaluation covers held-out
log-likelihood and an entropically regularized transport distance.
"""

__version__ = "0.1.0"

from .dataset import Dataset, UnitDataset, load_csv, save_csv, split, to_unit
from .gcm import GcmParams, copula_logdensity, fit_gcm
from .gmcm import (
    FitOptions,
    UnconstrainedParams,
    fit_gmcm,
    gmc_copula_logdensity,
    init_gmcm,
    map_gradient,
    map_objective,
)
from .gmm import GmmMarginal1d, GmmParams, fit_em
from .marginals import KdeMarginal, MarginalModel, fit_kde
from .metrics import (
    ComparisonReport,
    SinkhornConfig,
    compare_models,
    mean_loglik,
    sinkhorn_distance,
    sinkhorn_protocol,
)
from .modelio import FittedGcm, FittedGmcm, FittedGmm, load_model, save_model
from .rootfind import RootConfig, chandrupatla

__all__ = [
    "Dataset",
    "UnitDataset",
    "load_csv",
    "save_csv",
    "split",
    "to_unit",
    "KdeMarginal",
    "MarginalModel",
    "fit_kde",
    "RootConfig",
    "chandrupatla",
    "GmmParams",
    "GmmMarginal1d",
    "fit_em",
    "GcmParams",
    "fit_gcm",
    "copula_logdensity",
    "FitOptions",
    "UnconstrainedParams",
    "fit_gmcm",
    "init_gmcm",
    "gmc_copula_logdensity",
    "map_objective",
    "map_gradient",
    "SinkhornConfig",
    "ComparisonReport",
    "mean_loglik",
    "sinkhorn_distance",
    "sinkhorn_protocol",
    "compare_models",
    "FittedGmm",
    "FittedGcm",
    "FittedGmcm",
    "load_model",
    "save_model",
]
