"""Zero-inflated occupancy models under detection and presence heterogeneity."""

__version__ = "0.1.0"

from ._engine import ModelError
from .cells import MixtureSpec, cell_prob
from .data import DataError, Dataset, FrequencyTable, SiteRecord, aggregate, load_dataset, parse_formula
from .optim import OptimOptions, OptimResult, find_root, maximize, numeric_gradient, numeric_hessian
from .results import FitResult
from .robust import (BiasReport, HtEstimate, bias_rho, gamma_bias_rho, ht_psi_bar, ht_variance,
                     limit_omega)
from .sim import (FitterSpec, ScenarioConfig, StudyError, SummaryTable, bias_curve, generate,
                  run_study, simulate_replicate)
from .zib_models import fit_zib_homogeneous, fit_zib_mixture, fit_zib_regression
from .zip_models import fit_zip_homogeneous, fit_zip_mixture, fit_zip_regression, score_components

__all__ = [
    "BiasReport", "DataError", "Dataset", "FitResult", "FitterSpec", "FrequencyTable", "HtEstimate",
    "MixtureSpec", "ModelError", "OptimOptions", "OptimResult", "ScenarioConfig", "SiteRecord",
    "StudyError", "SummaryTable", "aggregate", "bias_curve", "bias_rho", "cell_prob", "find_root",
    "fit_zib_homogeneous", "fit_zib_mixture", "fit_zib_regression", "fit_zip_homogeneous",
    "fit_zip_mixture", "fit_zip_regression", "gamma_bias_rho", "generate", "ht_psi_bar",
    "ht_variance", "limit_omega", "load_dataset", "maximize", "numeric_gradient", "numeric_hessian",
    "parse_formula", "run_study", "score_components", "simulate_replicate",
]
