"""Observational data model and Euclidean nearest-neighbor search.

Matching is always done with replacement: the same pool unit may serve as a
neighbor for many query units. Distance ties are broken deterministically by
ascending unit index so that repeated runs (and permuted inputs) select the
same neighbor sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InsufficientPoolError

CONTINUOUS = "continuous"
BINARY = "binary"

_QUERY_BLOCK = 128  # rows of the distance matrix materialized at a time


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Covariates, binary treatment, and outcome for N units.

    Binary outcomes are stored as 0.0/1.0 floats with ``outcome_kind="binary"``.
    Arrays are copied and frozen so a Dataset can be shared across threads.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    outcome_kind: str = CONTINUOUS

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        d = np.asarray(self.treatment)
        y = np.asarray(self.outcome, dtype=float)
        if x.ndim != 2:
            raise DimensionError("covariates must be a 2-d (N, P) array")
        n, p = x.shape
        if n < 2 or p < 1:
            raise ValueError(f"need N >= 2 and P >= 1, got N={n}, P={p}")
        if d.shape != (n,) or y.shape != (n,):
            raise DimensionError(
                f"treatment and outcome must have length {n}, "
                f"got {d.shape} and {y.shape}"
            )
        if not np.isfinite(x).all():
            raise ValueError("covariates contain non-finite values")
        if not np.isin(d, (0, 1)).all():
            raise ValueError("treatment must contain only 0 and 1")
        d = d.astype(np.int64)
        if d.min() == d.max():
            raise ValueError("need at least one treated and one control unit")
        if self.outcome_kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"unknown outcome_kind {self.outcome_kind!r}")
        if self.outcome_kind == BINARY and not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("binary outcomes must be coded 0/1")
        object.__setattr__(self, "covariates", _readonly(x))
        object.__setattr__(self, "treatment", _readonly(d))
        object.__setattr__(self, "outcome", _readonly(y))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def treated_indices(self) -> np.ndarray:
        return np.flatnonzero(self.treatment == 1)

    @property
    def control_indices(self) -> np.ndarray:
        return np.flatnonzero(self.treatment == 0)

    @property
    def n_treated(self) -> int:
        return int(self.treatment.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated


@dataclass(frozen=True)
class MatchSet:
    """Nearest-neighbor assignments for a set of query units.

    ``matches[q]`` holds the original indices of the k pool units closest to
    query unit ``query_indices[q]``, ordered by (distance, index).
    ``match_counts`` is aligned with ``pool_indices`` and tallies how many
    times each pool unit was used across all queries.
    """

    query_indices: np.ndarray
    pool_indices: np.ndarray
    matches: np.ndarray
    match_counts: np.ndarray
    k: int

    def __post_init__(self):
        object.__setattr__(self, "query_indices", _readonly(np.asarray(self.query_indices, dtype=np.int64)))
        object.__setattr__(self, "pool_indices", _readonly(np.asarray(self.pool_indices, dtype=np.int64)))
        object.__setattr__(self, "matches", _readonly(np.asarray(self.matches, dtype=np.int64)))
        object.__setattr__(self, "match_counts", _readonly(np.asarray(self.match_counts, dtype=np.int64)))

    @property
    def n_queries(self) -> int:
        return len(self.query_indices)

    def counts_by_unit(self, n: int) -> np.ndarray:
        """Scatter match counts into a length-n vector indexed by unit."""
        out = np.zeros(n, dtype=np.int64)
        out[self.pool_indices] = self.match_counts
        return out


def euclidean_distance(x_i, x_j) -> float:
    """Euclidean distance between two equal-length covariate vectors."""
    a = np.asarray(x_i, dtype=float)
    b = np.asarray(x_j, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}")
    return math.sqrt(float(((a - b) ** 2).sum()))


def _standardized(x: np.ndarray, involved: np.ndarray) -> np.ndarray:
    """Z-score covariate columns using the units involved in the search."""
    sub = x[involved]
    mean = sub.mean(axis=0)
    std = sub.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return (x - mean) / std


def rank_pool_by_distance(
    dataset: Dataset,
    query_indices,
    pool_indices,
    standardize: bool = False,
) -> np.ndarray:
    """Full nearest-to-farthest ordering of the pool for each query unit.

    Returns a (Q, M) array of positions into ``pool_indices``. Column j of
    row q is the position of the (j+1)-th nearest pool unit to query q, with
    ties broken by ascending original unit index. A query unit that also
    appears in the pool is pushed to the end of its own row (it never matches
    itself), so callers must not take more than M-1 neighbors for such rows.

    Slicing the first k columns gives exactly the k-nearest sets; larger k
    extend smaller ones (prefix property).
    """
    query_indices = np.asarray(query_indices, dtype=np.int64)
    pool_indices = np.asarray(pool_indices, dtype=np.int64)
    x = dataset.covariates
    if standardize:
        involved = np.unique(np.concatenate([query_indices, pool_indices]))
        x = _standardized(x, involved)
    xq = x[query_indices]
    xp = x[pool_indices]
    q, m = len(query_indices), len(pool_indices)
    order = np.empty((q, m), dtype=np.int64)
    for start in range(0, q, _QUERY_BLOCK):
        stop = min(start + _QUERY_BLOCK, q)
        diff = xq[start:stop, None, :] - xp[None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=2))
        # self-matches (same original index, not merely equal covariates)
        self_mask = query_indices[start:stop, None] == pool_indices[None, :]
        dist[self_mask] = np.inf
        for row in range(stop - start):
            order[start + row] = np.lexsort((pool_indices, dist[row]))
    return order


def find_matches(
    dataset: Dataset,
    query_indices,
    pool_indices,
    k: int,
    standardize: bool = False,
) -> MatchSet:
    """k nearest pool units for every query unit, with replacement.

    Ties in distance are broken by ascending unit index. A query unit never
    matches itself even when it appears in the pool.
    """
    query_indices = np.asarray(query_indices, dtype=np.int64)
    pool_indices = np.asarray(pool_indices, dtype=np.int64)
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    m = len(pool_indices)
    if k > m:
        raise InsufficientPoolError(f"k={k} exceeds pool size {m}")
    if len(query_indices) == 0:
        return MatchSet(
            query_indices=query_indices,
            pool_indices=pool_indices,
            matches=np.empty((0, k), dtype=np.int64),
            match_counts=np.zeros(m, dtype=np.int64),
            k=k,
        )
    in_pool = np.isin(query_indices, pool_indices)
    if in_pool.any() and k > m - 1:
        raise InsufficientPoolError(
            f"k={k} exceeds the {m - 1} candidates available to a query unit "
            "that is also in the pool"
        )
    order = rank_pool_by_distance(dataset, query_indices, pool_indices, standardize)
    positions = order[:, :k]
    counts = np.bincount(positions.ravel(), minlength=m)
    return MatchSet(
        query_indices=query_indices,
        pool_indices=pool_indices,
        matches=pool_indices[positions],
        match_counts=counts,
        k=k,
    )
