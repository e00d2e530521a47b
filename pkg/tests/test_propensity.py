import math
import warnings

import numpy as np
import pytest

from cvmatch.data import Dataset
from cvmatch.errors import DimensionError, SeparationWarning, SingularDesignError
from cvmatch.propensity import PropensityModel, fit_logit, predict_propensity


def logit_dataset(rng, n=500, intercept=0.15, slope=0.7):
    x = rng.normal(size=(n, 1))
    p = 1.0 / (1.0 + np.exp(-(intercept + slope * x[:, 0])))
    d = (rng.uniform(size=n) < p).astype(np.int64)
    if d.min() == d.max():  # pragma: no cover - vanishingly unlikely
        d[0] = 1 - d[0]
    return Dataset(x, d, np.zeros(n))


def loglik(beta0, beta1, x, d):
    eta = beta0 + beta1 * x
    return float(np.sum(d * eta - np.logaddexp(0.0, eta)))


def test_constant_covariates_give_intercept_only_fit():
    x = np.full((10, 2), 3.0)
    d = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
    model = fit_logit(Dataset(x, d, np.zeros(10)))
    p_bar = 0.3
    assert model.coefficients[0] == pytest.approx(math.log(p_bar / (1 - p_bar)), abs=1e-8)
    assert model.coefficients[1:] == pytest.approx([0.0, 0.0])
    assert model.converged


def test_quasi_complete_separation_flagged():
    ds = Dataset(np.array([[2.0], [2.0], [1.0], [1.0]]), [1, 1, 0, 0], np.zeros(4))
    with pytest.warns(SeparationWarning):
        model = fit_logit(ds)
    assert not model.converged


def test_duplicate_columns_raise_singular_design():
    x = np.column_stack([np.arange(6.0), np.arange(6.0)])
    ds = Dataset(x, [0, 1, 0, 1, 0, 1], np.zeros(6))
    with pytest.raises(SingularDesignError):
        fit_logit(ds)


def test_recovers_known_coefficients_within_3_se(rng):
    ds = logit_dataset(rng)
    model = fit_logit(ds)
    assert model.converged
    # standard errors from the observed information at the fit
    z = np.column_stack([np.ones(ds.n), ds.covariates])
    p = model.fitted
    info = z.T @ (z * (p * (1 - p))[:, None])
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    assert abs(model.coefficients[0] - 0.15) < 3 * se[0]
    assert abs(model.coefficients[1] - 0.7) < 3 * se[1]


def test_beats_grid_search_likelihood_oracle(rng):
    ds = logit_dataset(rng)
    model = fit_logit(ds)
    x = ds.covariates[:, 0]
    d = ds.treatment
    grid = np.arange(-1.0, 2.5, 0.05)
    best = max(
        ((loglik(b0, b1, x, d), b0, b1) for b0 in grid for b1 in grid),
        key=lambda t: t[0],
    )
    fitted_ll = loglik(model.coefficients[0], model.coefficients[1], x, d)
    assert fitted_ll >= best[0]
    assert abs(model.coefficients[0] - best[1]) <= 0.05
    assert abs(model.coefficients[1] - best[2]) <= 0.05


def test_score_equations_hold(rng):
    ds = logit_dataset(rng, n=300)
    model = fit_logit(ds)
    z = np.column_stack([np.ones(ds.n), ds.covariates])
    score = z.T @ (ds.treatment - model.fitted)
    assert np.abs(score).max() <= 1e-6
    assert abs(model.fitted.mean() - ds.treatment.mean()) <= 1e-6


def test_row_permutation_stability(rng):
    ds = logit_dataset(rng, n=200)
    model = fit_logit(ds)
    perm = rng.permutation(ds.n)
    ds_perm = Dataset(ds.covariates[perm], ds.treatment[perm], ds.outcome[perm])
    model_perm = fit_logit(ds_perm)
    assert model.coefficients == pytest.approx(model_perm.coefficients, abs=1e-10)


def test_marginal_is_treated_share(rng):
    ds = logit_dataset(rng, n=100)
    assert fit_logit(ds).marginal == ds.treatment.mean()


class TestPredict:
    def _model(self, coefficients):
        c = np.asarray(coefficients, dtype=float)
        return PropensityModel(
            coefficients=c,
            fitted=np.array([0.5]),
            marginal=0.5,
            converged=True,
            iterations=1,
        )

    def test_zero_coefficients_give_half(self):
        assert predict_propensity(self._model([0.0, 0.0, 0.0]), [4.2, -1.0]) == 0.5

    def test_zero_input_gives_half(self):
        assert predict_propensity(self._model([0.0, 1.0]), [0.0]) == 0.5

    def test_huge_intercept_is_clamped(self):
        assert predict_propensity(self._model([1e4, 0.0]), [0.0]) == 1.0 - 1e-6
        assert predict_propensity(self._model([-1e4, 0.0]), [0.0]) == 1e-6

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            predict_propensity(self._model([0.0, 1.0]), [1.0, 2.0])

    def test_batch_prediction_matches_scalar(self, rng):
        model = self._model([0.2, -0.5, 1.0])
        xs = rng.normal(size=(6, 2))
        batch = model.predict(xs)
        for row, value in zip(xs, batch):
            assert predict_propensity(model, row) == value
