"""Choice of the number of neighbors by stratified G-fold cross-validation.

For each candidate k, every fold plays the test set once: test-fold query
units are matched against training-fold pool units, a training-fold
regression supplies the bias correction, and the fold's bias-corrected
estimate is compared with the fold mean of the transformed outcomes (an
unbiased reference that never looks at the matching). The selected k
minimizes the average squared gap, ties going to the smallest k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, rank_pool_by_distance
from .errors import InfeasibleKError, InfeasibleStratificationError
from .estimator import (
    CONTROL,
    TREATED,
    EffectEstimate,
    bias_corrected_effect,
    fit_outcome_regression,
)
from .propensity import PropensityModel, fit_logit
from .transform import ATE, ATET, ESTIMANDS


@dataclass(frozen=True)
class FoldAssignment:
    """Fold labels for every unit, stratified by treatment arm."""

    fold_of: np.ndarray
    folds: int
    seed: int

    def test_indices(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == g)

    def train_indices(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != g)


@dataclass(frozen=True)
class CvResult:
    """Per-k cross-validation curve and the selected k."""

    k_grid: np.ndarray
    mse: np.ndarray
    k_star: int
    per_fold_estimates: np.ndarray  # (folds, len(k_grid))
    per_fold_targets: np.ndarray  # (folds,)

    def to_dict(self) -> dict:
        return {
            "k_grid": self.k_grid.tolist(),
            "mse": self.mse.tolist(),
            "k_star": int(self.k_star),
            "per_fold_estimates": self.per_fold_estimates.tolist(),
            "per_fold_targets": self.per_fold_targets.tolist(),
        }


def stratified_folds(dataset: Dataset, folds: int, seed: int) -> FoldAssignment:
    """Deal each arm round-robin into folds after a seeded shuffle.

    Within each arm, fold sizes differ by at most one, so every fold keeps
    roughly the full-sample treated share and contains at least one unit of
    each arm.
    """
    if folds < 2:
        raise ValueError(f"need at least 2 folds, got {folds}")
    for arm in (dataset.treated_indices, dataset.control_indices):
        if len(arm) < folds:
            raise InfeasibleStratificationError(
                f"an arm has {len(arm)} units, fewer than {folds} folds"
            )
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    fold_of = np.empty(dataset.n, dtype=np.int64)
    for arm in (dataset.treated_indices, dataset.control_indices):
        shuffled = rng.permutation(arm)
        fold_of[shuffled] = np.arange(len(shuffled)) % folds
    return FoldAssignment(fold_of=fold_of, folds=folds, seed=seed)


class _FoldContext:
    """Per-fold precomputation shared across the k grid."""

    def __init__(
        self,
        dataset: Dataset,
        assignment: FoldAssignment,
        g: int,
        estimand: str,
        propensity: PropensityModel,
        standardize: bool,
        refit_propensity: bool,
        include_squares: bool,
    ):
        d = dataset.treatment
        y = dataset.outcome
        x = dataset.covariates
        test = assignment.test_indices(g)
        train = assignment.train_indices(g)
        self.estimand = estimand
        self.n_test = len(test)

        if refit_propensity:
            fold_model = fit_logit(
                Dataset(x[train], d[train], y[train], dataset.outcome_kind)
            )
            p_test = fold_model.predict(x[test])
        else:
            p_test = propensity.fitted[test]
        d_test = d[test]
        y_test = y[test]
        if estimand == ATET:
            share = d_test.mean()
            values = y_test * (d_test - p_test) / (share * (1.0 - p_test))
        else:
            values = y_test * (d_test - p_test) / (p_test * (1.0 - p_test))
        self.target = float(values.mean())

        self.test_treated = test[d_test == 1]
        train_controls = train[d[train] == 0]
        self.order_t2c = rank_pool_by_distance(
            dataset, self.test_treated, train_controls, standardize
        )
        mu0 = fit_outcome_regression(
            dataset, CONTROL, train_controls, include_squares=include_squares
        )
        self.y_t2c_pool = y[train_controls]
        self.mu0_query = mu0.predict(x[self.test_treated])
        self.mu0_pool = mu0.predict(x[train_controls])
        self.max_k = len(train_controls)

        if estimand == ATE:
            self.test_controls = test[d_test == 0]
            train_treated = train[d[train] == 1]
            self.order_c2t = rank_pool_by_distance(
                dataset, self.test_controls, train_treated, standardize
            )
            mu1 = fit_outcome_regression(
                dataset, TREATED, train_treated, include_squares=include_squares
            )
            self.y_c2t_pool = y[train_treated]
            self.mu1_query = mu1.predict(x[self.test_controls])
            self.mu1_pool = mu1.predict(x[train_treated])
            self.max_k = min(self.max_k, len(train_treated))
        self.y_test_treated = y[self.test_treated]
        if estimand == ATE:
            self.y_test_controls = y[self.test_controls]

    def estimate(self, k: int) -> float:
        """Bias-corrected matching estimate for this test fold at k."""
        if k > self.max_k:
            raise InfeasibleKError(
                f"k={k} exceeds a training pool of size {self.max_k}"
            )
        pos = self.order_t2c[:, :k]
        t_raw = self.y_test_treated - self.y_t2c_pool[pos].mean(axis=1)
        t_bias = self.mu0_query - self.mu0_pool[pos].mean(axis=1)
        if self.estimand == ATET:
            return float(t_raw.mean() - t_bias.mean())
        pos_c = self.order_c2t[:, :k]
        c_raw = self.y_test_controls - self.y_c2t_pool[pos_c].mean(axis=1)
        c_bias = self.mu1_query - self.mu1_pool[pos_c].mean(axis=1)
        raw = (t_raw.sum() - c_raw.sum()) / self.n_test
        bias = (t_bias.sum() - c_bias.sum()) / self.n_test
        return float(raw - bias)


def _fold_contexts(
    dataset: Dataset,
    assignment: FoldAssignment,
    estimand: str,
    propensity: PropensityModel,
    standardize: bool,
    refit_propensity: bool,
    include_squares: bool,
) -> list[_FoldContext]:
    return [
        _FoldContext(
            dataset,
            assignment,
            g,
            estimand,
            propensity,
            standardize,
            refit_propensity,
            include_squares,
        )
        for g in range(assignment.folds)
    ]


def cv_objective(
    dataset: Dataset,
    assignment: FoldAssignment,
    k: int,
    estimand: str = ATET,
    propensity: PropensityModel | None = None,
    standardize: bool = False,
    refit_propensity_per_fold: bool = False,
    include_squares: bool = False,
) -> float:
    """Average over folds of the squared gap between fold estimate and fold target."""
    if estimand not in ESTIMANDS:
        raise ValueError(f"estimand must be one of {ESTIMANDS}, got {estimand!r}")
    if propensity is None:
        propensity = fit_logit(dataset)
    contexts = _fold_contexts(
        dataset, assignment, estimand, propensity, standardize,
        refit_propensity_per_fold, include_squares,
    )
    gaps = np.array([ctx.estimate(k) - ctx.target for ctx in contexts])
    return float((gaps**2).mean())


def max_feasible_k(dataset: Dataset, assignment: FoldAssignment, estimand: str) -> int:
    """Largest k usable for every training fold and the final full-sample fit."""
    d = dataset.treatment
    n0, n1 = dataset.n_control, dataset.n_treated
    bound = min(n0, min(n0, n1) - 1)  # final match pool and same-arm variance
    if estimand == ATE:
        bound = min(bound, n1)
    for g in range(assignment.folds):
        train = assignment.train_indices(g)
        train_controls = int((d[train] == 0).sum())
        bound = min(bound, train_controls)
        if estimand == ATE:
            bound = min(bound, int((d[train] == 1).sum()))
    return bound


def select_k(
    dataset: Dataset,
    folds: int = 5,
    k_max: int = 20,
    estimand: str = ATET,
    seed: int = 0,
    alpha: float = 0.05,
    standardize: bool = False,
    refit_propensity_per_fold: bool = False,
    include_squares: bool = False,
    shrink_grid: bool = False,
    propensity: PropensityModel | None = None,
) -> tuple[CvResult, EffectEstimate]:
    """Cross-validate k over 1..k_max and refit on the full sample at the winner.

    With ``shrink_grid`` the grid is silently truncated to the largest
    feasible k instead of raising when k_max exceeds some training pool.
    """
    if estimand not in ESTIMANDS:
        raise ValueError(f"estimand must be one of {ESTIMANDS}, got {estimand!r}")
    if k_max < 1:
        raise ValueError(f"k_max must be positive, got {k_max}")
    if propensity is None:
        propensity = fit_logit(dataset)
    assignment = stratified_folds(dataset, folds, seed)
    feasible = max_feasible_k(dataset, assignment, estimand)
    if feasible < 1:
        raise InfeasibleKError("no k is feasible for this dataset and fold count")
    if k_max > feasible and not shrink_grid:
        raise InfeasibleKError(
            f"k_max={k_max} exceeds the largest feasible k ({feasible}); "
            "lower k_max or pass shrink_grid=True"
        )
    k_grid = np.arange(1, min(k_max, feasible) + 1)

    contexts = _fold_contexts(
        dataset, assignment, estimand, propensity, standardize,
        refit_propensity_per_fold, include_squares,
    )
    per_fold = np.empty((folds, len(k_grid)))
    for col, k in enumerate(k_grid):
        for g, ctx in enumerate(contexts):
            per_fold[g, col] = ctx.estimate(int(k))
    targets = np.array([ctx.target for ctx in contexts])
    mse = ((per_fold - targets[:, None]) ** 2).mean(axis=0)
    k_star = int(k_grid[int(np.argmin(mse))])  # argmin takes the smallest k on ties

    final = bias_corrected_effect(
        dataset, k_star, estimand, alpha, standardize, include_squares
    )
    result = CvResult(
        k_grid=k_grid,
        mse=mse,
        k_star=k_star,
        per_fold_estimates=per_fold,
        per_fold_targets=targets,
    )
    return result, final
