"""Inverse-propensity transformed outcomes.

Each unit gets a statistic whose conditional expectation equals the target
treatment effect, so the sample mean of the transformed values is an unbiased
reference for cross-validation. The treated-effect (ATET) version rescales by
the marginal treatment probability; the whole-population (ATE) version
rescales by the unit's own propensity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import InvalidMarginalError
from .propensity import PropensityModel

ATET = "atet"
ATE = "ate"
ESTIMANDS = (ATET, ATE)


@dataclass(frozen=True)
class TransformedOutcomes:
    values: np.ndarray
    estimand: str


def transformed_outcome_atet(y: float, d: int, p_hat: float, p_marginal: float) -> float:
    """y * (d - p_hat) / (p_marginal * (1 - p_hat))."""
    if not 0.0 < p_marginal < 1.0:
        raise InvalidMarginalError(f"marginal probability {p_marginal} not in (0, 1)")
    return y * (d - p_hat) / (p_marginal * (1.0 - p_hat))


def transformed_outcome_ate(y: float, d: int, p_hat: float) -> float:
    """y * (d - p_hat) / (p_hat * (1 - p_hat)); y/p_hat for treated, -y/(1-p_hat) for controls."""
    return y * (d - p_hat) / (p_hat * (1.0 - p_hat))


def transformed_outcomes(
    dataset: Dataset,
    model: PropensityModel,
    estimand: str = ATET,
    marginal: float | None = None,
) -> TransformedOutcomes:
    """Vectorized transform over all units of a dataset.

    For the ATET the marginal treatment probability defaults to the model's
    full-sample rate; cross-validation passes the test-fold share instead.
    """
    if estimand not in ESTIMANDS:
        raise ValueError(f"estimand must be one of {ESTIMANDS}, got {estimand!r}")
    y = dataset.outcome
    d = dataset.treatment
    p = model.fitted
    if estimand == ATET:
        if marginal is None:
            marginal = model.marginal
        if not 0.0 < marginal < 1.0:
            raise InvalidMarginalError(f"marginal probability {marginal} not in (0, 1)")
        values = y * (d - p) / (marginal * (1.0 - p))
    else:
        values = y * (d - p) / (p * (1.0 - p))
    return TransformedOutcomes(values=values, estimand=estimand)
