"""Covariate balance checks between treated units and their matched controls.

The matched-control side is the multiset of matched units across all queries,
so controls matched many times count as many observations. Binary covariates
get a pooled two-proportion z test, continuous ones a two-sample t statistic;
both are compared against the normal critical value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .data import Dataset, MatchSet
from .errors import UndefinedStatisticError


@dataclass(frozen=True)
class CovariateBalance:
    name: str
    kind: str  # "continuous" or "binary"
    treated_mean: float
    matched_control_mean: float
    statistic: float
    critical_value: float
    balanced: bool


@dataclass(frozen=True)
class BalanceReport:
    records: list[CovariateBalance]
    alpha: float
    passed: bool

    def to_rows(self) -> list[dict]:
        return [
            {
                "covariate": r.name,
                "kind": r.kind,
                "treated_mean": r.treated_mean,
                "matched_control_mean": r.matched_control_mean,
                "statistic": r.statistic,
                "critical_value": r.critical_value,
                "balanced": r.balanced,
            }
            for r in self.records
        ]


def mean_difference_test(sample1, sample0) -> float:
    """Two-sample t statistic with unpooled variances (n-1 denominators)."""
    a = np.asarray(sample1, dtype=float)
    b = np.asarray(sample0, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise UndefinedStatisticError("both samples need at least 2 observations")
    se2 = a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b)
    if se2 <= 0.0:
        raise UndefinedStatisticError("zero variability in both samples")
    return float((a.mean() - b.mean()) / math.sqrt(se2))


def proportion_difference_test(x1: int, n1: int, x0: int, n0: int) -> float:
    """Pooled two-proportion z statistic."""
    if n1 < 1 or n0 < 1:
        raise UndefinedStatisticError("both groups need at least one observation")
    if not (0 <= x1 <= n1 and 0 <= x0 <= n0):
        raise ValueError("success counts must lie in [0, n]")
    pooled = (x1 + x0) / (n1 + n0)
    if pooled <= 0.0 or pooled >= 1.0:
        raise UndefinedStatisticError(f"pooled proportion {pooled} is degenerate")
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n0))
    return float((x1 / n1 - x0 / n0) / se)


def balance_report(
    dataset: Dataset,
    match_set: MatchSet,
    alpha: float = 0.05,
    covariate_names: list[str] | None = None,
) -> BalanceReport:
    """Per-covariate tests of treated means against matched-control means.

    The matched-control sample repeats each control once per time it was
    matched (weights J/k up to the common scale). Covariates whose values
    are all 0/1 are tested as proportions.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    p = dataset.n_covariates
    if covariate_names is None:
        covariate_names = [f"x{j}" for j in range(p)]
    if len(covariate_names) != p:
        raise ValueError(f"expected {p} covariate names, got {len(covariate_names)}")
    critical = float(ndtri(1.0 - alpha / 2.0))
    treated_rows = dataset.covariates[match_set.query_indices]
    matched_rows = dataset.covariates[match_set.matches.ravel()]
    records = []
    for j, name in enumerate(covariate_names):
        treated = treated_rows[:, j]
        matched = matched_rows[:, j]
        column = dataset.covariates[:, j]
        if np.isin(column, (0.0, 1.0)).all():
            kind = "binary"
            statistic = proportion_difference_test(
                int(treated.sum()), len(treated), int(matched.sum()), len(matched)
            )
        else:
            kind = "continuous"
            statistic = mean_difference_test(treated, matched)
        records.append(
            CovariateBalance(
                name=name,
                kind=kind,
                treated_mean=float(treated.mean()),
                matched_control_mean=float(matched.mean()),
                statistic=statistic,
                critical_value=critical,
                balanced=abs(statistic) < critical,
            )
        )
    return BalanceReport(
        records=records,
        alpha=alpha,
        passed=all(r.balanced for r in records),
    )
