"""Logit propensity model fit by Newton's method (IRLS) with step halving."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DimensionError, SeparationWarning, SingularDesignError

PROB_CLAMP = 1e-6  # keeps transformed-outcome denominators finite
GRADIENT_TOL = 1e-8
MAX_ITER = 100
_MAX_HALVINGS = 30


@dataclass(frozen=True)
class PropensityModel:
    """Fitted conditional treatment probabilities plus the marginal rate.

    ``coefficients`` is (intercept, slopes...); ``fitted`` holds per-unit
    probabilities clamped to [PROB_CLAMP, 1 - PROB_CLAMP]; ``marginal`` is
    the sample share of treated units.
    """

    coefficients: np.ndarray
    fitted: np.ndarray
    marginal: float
    converged: bool
    iterations: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Clamped treatment probabilities for rows of a covariate matrix."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != len(self.coefficients) - 1:
            raise DimensionError(
                f"expected {len(self.coefficients) - 1} covariates, got {x.shape[1]}"
            )
        eta = self.coefficients[0] + x @ self.coefficients[1:]
        return np.clip(_sigmoid(eta), PROB_CLAMP, 1.0 - PROB_CLAMP)


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    # stable for large |eta|
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _log_likelihood(d: np.ndarray, eta: np.ndarray) -> float:
    # log L = sum d*eta - log(1 + exp(eta)), computed stably
    return float((d * eta - np.logaddexp(0.0, eta)).sum())


def fit_logit(dataset: Dataset, max_iter: int = MAX_ITER) -> PropensityModel:
    """Maximum-likelihood logit of treatment on [1 | X].

    Covariate columns with zero variance are absorbed into the intercept and
    get zero slope; rank deficiency among the remaining columns raises
    SingularDesignError. Non-convergence within ``max_iter`` produces a
    SeparationWarning (when the linear predictor perfectly orders the arms)
    and a model with ``converged=False``.
    """
    x = dataset.covariates
    d = dataset.treatment.astype(float)
    n, p = x.shape

    active = np.flatnonzero(x.std(axis=0) > 0.0)
    z = np.column_stack([np.ones(n), x[:, active]])
    if np.linalg.matrix_rank(z) < z.shape[1]:
        raise SingularDesignError("design matrix [1 | X] is rank deficient")

    beta = np.zeros(z.shape[1])
    eta = z @ beta
    loglik = _log_likelihood(d, eta)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        prob = _sigmoid(eta)
        grad = z.T @ (d - prob)
        if np.abs(grad).max() <= GRADIENT_TOL:
            converged = True
            break
        w = prob * (1.0 - prob)
        hess = z.T @ (z * w[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break  # weights collapsed; handled as non-convergence below
        scale = 1.0
        # accept anything within float noise of the current value, otherwise
        # the line search can reject pure-rounding decreases near the optimum
        floor = loglik - 1e-10 * (1.0 + abs(loglik))
        for _ in range(_MAX_HALVINGS):
            candidate = beta + scale * step
            cand_eta = z @ candidate
            cand_loglik = _log_likelihood(d, cand_eta)
            if cand_loglik >= floor:
                break
            scale *= 0.5
        beta = beta + scale * step
        eta = z @ beta
        loglik = _log_likelihood(d, eta)

    # Under separation the score also vanishes numerically (probabilities are
    # pushed to 0/1), so a small gradient alone must not count as convergence.
    # A perfectly arm-ordering linear predictor with non-constant values and
    # saturated probabilities has no finite maximizer.
    treated = d == 1
    prob = _sigmoid(eta)
    separated = (
        eta.max() > eta.min()
        and eta[treated].min() >= eta[~treated].max()
        and (prob.max() > 1.0 - PROB_CLAMP or prob.min() < PROB_CLAMP)
    )
    if separated:
        converged = False
        warnings.warn(
            "complete or quasi-complete separation detected; "
            "coefficients diverge and are reported at the last iterate",
            SeparationWarning,
            stacklevel=2,
        )
    elif not converged:
        warnings.warn(
            f"logit did not converge in {max_iter} iterations",
            SeparationWarning,
            stacklevel=2,
        )

    coefficients = np.zeros(p + 1)
    coefficients[0] = beta[0]
    coefficients[1 + active] = beta[1:]
    fitted = np.clip(_sigmoid(dataset.covariates @ coefficients[1:] + coefficients[0]),
                     PROB_CLAMP, 1.0 - PROB_CLAMP)
    return PropensityModel(
        coefficients=coefficients,
        fitted=fitted,
        marginal=float(d.mean()),
        converged=converged,
        iterations=iterations,
    )


def predict_propensity(model: PropensityModel, x) -> float:
    """Clamped treatment probability for one covariate vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError("x must be a 1-d covariate vector")
    return float(model.predict(x[None, :])[0])
