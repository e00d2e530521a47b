"""Independent brute-force reference implementations used by the tests.

Everything here is deliberately written from scratch in plain Python loops
(sorted() on distance/index pairs, explicit normal equations, hand summation)
so that agreement with the package is meaningful.
"""

import math

import numpy as np


def distance_oracle(a, b) -> float:
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def knn_oracle(x, query_ids, pool_ids, k) -> list[list[int]]:
    """Sort all candidate distances per query; ties by ascending unit index."""
    out = []
    for q in query_ids:
        candidates = []
        for j in pool_ids:
            if j == q:
                continue
            candidates.append((distance_oracle(x[q], x[j]), j))
        candidates.sort()
        out.append([j for _, j in candidates[:k]])
    return out


def match_counts_oracle(match_lists, pool_ids) -> dict[int, int]:
    counts = {int(j): 0 for j in pool_ids}
    for row in match_lists:
        for j in row:
            counts[int(j)] += 1
    return counts


def matching_atet_oracle(y, treated_ids, match_lists) -> float:
    total = 0.0
    for i, row in zip(treated_ids, match_lists):
        total += y[i] - sum(y[j] for j in row) / len(row)
    return total / len(treated_ids)


def ols_oracle(x_rows, y_vals) -> np.ndarray:
    """Normal equations solved by explicit matrix inversion."""
    z = np.column_stack([np.ones(len(x_rows)), np.asarray(x_rows, dtype=float)])
    xtx = z.T @ z
    return np.linalg.inv(xtx) @ (z.T @ np.asarray(y_vals, dtype=float))


def predict_affine(coef, x_row) -> float:
    return coef[0] + sum(c * v for c, v in zip(coef[1:], x_row))


def bias_atet_oracle(x, treated_ids, match_lists, coef) -> float:
    total = 0.0
    for i, row in zip(treated_ids, match_lists):
        own = predict_affine(coef, x[i])
        avg = sum(predict_affine(coef, x[j]) for j in row) / len(row)
        total += own - avg
    return total / len(treated_ids)


def sigma2_oracle(x, y, d, k) -> list[float]:
    """Same-arm k-nearest-neighbor conditional variance, self excluded."""
    n = len(y)
    out = [0.0] * n
    for i in range(n):
        arm = [j for j in range(n) if d[j] == d[i] and j != i]
        nearest = knn_oracle(x, [i], arm, k)[0]
        avg = sum(y[j] for j in nearest) / k
        out[i] = (k / (k + 1)) * (y[i] - avg) ** 2
    return out


def v_error_atet_oracle(x, y, d, k, sigma2) -> float:
    """Hand-rolled summation of the match-count-weighted variance."""
    n = len(y)
    treated = [i for i in range(n) if d[i] == 1]
    controls = [i for i in range(n) if d[i] == 0]
    match_lists = knn_oracle(x, treated, controls, k)
    counts = match_counts_oracle(match_lists, controls)
    total = 0.0
    for i in range(n):
        if d[i] == 1:
            weight = 1.0
        else:
            weight = counts[i] / k
        total += weight**2 * sigma2[i]
    return total / len(treated)
