"""Population-mean inference from a nonignorable non-probability sample and a reference survey."""

from .analysis import run_analysis
from .estimator import NonignorableMeanEstimator
from .estimators import MeanEstimate, ignorable_baselines, mu_aipw, mu_el, mu_ipw, mu_naive, mu_reg
from .exceptions import *  # noqa: F401,F403
from .fitting import (
    FitResult,
    el_weights,
    fit_outcome_mle,
    fit_theta_calibration,
    fit_theta_pml,
    identifiability_diagnostic,
    pseudo_loglik,
    pseudo_score,
)
from .io import AnalysisConfig, Report, emit_report, load_sample_a, load_sample_b, parse_report
from .model import CovariateSchema, DesignInfo, Family, SampleA, SampleB, Theta, Xi
from .variance import IntervalEstimate, design_variance, estimate_components, sigma2_plugin, wald_ci

__version__ = "0.1.0"
