"""Bias-corrected k-NN matching treatment effects with cross-validated k."""

from importlib.resources import files as _files
from pathlib import Path

__version__ = "0.1.0"

from .balance import BalanceReport, balance_report, mean_difference_test, proportion_difference_test
from .data import BINARY, CONTINUOUS, Dataset, MatchSet, euclidean_distance, find_matches
from .errors import CvMatchError, SeparationWarning
from .estimator import (
    EffectEstimate,
    OutcomeRegression,
    bias_atet,
    bias_corrected_effect,
    conditional_variance,
    confidence_interval,
    effects_over_grid,
    fit_outcome_regression,
    matching_atet,
    matching_ate,
    variance_components,
)
from .propensity import PropensityModel, fit_logit, predict_propensity
from .sim import SimConfig, SimResult, generate_binary, generate_continuous, response_curve, run_monte_carlo
from .transform import (
    ATE,
    ATET,
    TransformedOutcomes,
    transformed_outcome_ate,
    transformed_outcome_atet,
    transformed_outcomes,
)
from .cv import CvResult, FoldAssignment, cv_objective, select_k, stratified_folds


def demo_csv_path() -> Path:
    """Path of the small bundled example dataset."""
    return Path(str(_files("cvmatch").joinpath("data/demo.csv")))
