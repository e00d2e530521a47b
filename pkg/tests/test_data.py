import numpy as np
import pytest

from cvmatch.data import Dataset, euclidean_distance, find_matches, rank_pool_by_distance
from cvmatch.errors import DimensionError, InsufficientPoolError

from _oracles import distance_oracle, knn_oracle
from conftest import random_dataset


def line_dataset(xs, treatment):
    """1-d dataset at the given positions; outcome equals the position."""
    xs = np.asarray(xs, dtype=float)
    return Dataset(xs[:, None], np.asarray(treatment), xs.copy())


class TestEuclideanDistance:
    def test_3_4_5_triangle(self):
        assert euclidean_distance([0, 0], [3, 4]) == 5.0

    def test_identical_vectors(self):
        assert euclidean_distance([1, 2, 3], [1, 2, 3]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            euclidean_distance([1, 2], [1, 2, 3])

    def test_against_sum_of_squares_oracle(self, rng):
        for _ in range(100):
            a = rng.normal(size=5)
            b = rng.normal(size=5)
            assert euclidean_distance(a, b) == pytest.approx(distance_oracle(a, b), abs=1e-12)

    def test_symmetry_and_zero_iff_equal(self, rng):
        a = rng.normal(size=4)
        b = rng.normal(size=4)
        assert euclidean_distance(a, b) == euclidean_distance(b, a)
        assert euclidean_distance(a, b) > 0.0


class TestDatasetInvariants:
    def test_rejects_single_arm(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 1)), [1, 1, 1], [0.0, 0.0, 0.0])

    def test_rejects_non_binary_treatment(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 1)), [0, 1, 2], [0.0, 0.0, 0.0])

    def test_rejects_nonfinite_covariates(self):
        x = np.zeros((3, 1))
        x[1, 0] = np.nan
        with pytest.raises(ValueError):
            Dataset(x, [0, 1, 0], [0.0, 0.0, 0.0])

    def test_rejects_length_mismatch(self):
        with pytest.raises(DimensionError):
            Dataset(np.zeros((3, 1)), [0, 1], [0.0, 0.0, 0.0])

    def test_rejects_non_01_binary_outcome(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 1)), [0, 1], [0.5, 1.0], "binary")

    def test_arrays_are_frozen(self):
        ds = line_dataset([1.0, 2.0], [0, 1])
        with pytest.raises(ValueError):
            ds.outcome[0] = 9.0


class TestFindMatches:
    def test_single_nearest(self):
        # query at 2.0; pool at 1.0, 5.0, 2.5 -> nearest is 2.5
        ds = line_dataset([2.0, 1.0, 5.0, 2.5], [1, 0, 0, 0])
        ms = find_matches(ds, [0], [1, 2, 3], k=1)
        assert ms.matches.tolist() == [[3]]

    def test_k_equals_pool_size_orders_by_distance(self):
        ds = line_dataset([2.0, 1.0, 5.0, 2.5], [1, 0, 0, 0])
        ms = find_matches(ds, [0], [1, 2, 3], k=3)
        assert ms.matches.tolist() == [[3, 1, 2]]

    def test_tie_broken_by_lower_index(self):
        # pool units at 1.0 and 3.0 are equidistant from the query at 2.0
        ds = line_dataset([2.0, 1.0, 3.0], [1, 0, 0])
        ms = find_matches(ds, [0], [1, 2], k=1)
        assert ms.matches.tolist() == [[1]]

    def test_insufficient_pool(self):
        ds = line_dataset([2.0, 1.0], [1, 0])
        with pytest.raises(InsufficientPoolError):
            find_matches(ds, [0], [1], k=2)

    def test_empty_query_set_is_valid(self):
        ds = line_dataset([2.0, 1.0, 3.0], [1, 0, 0])
        ms = find_matches(ds, [], [1, 2], k=2)
        assert ms.n_queries == 0
        assert ms.match_counts.sum() == 0

    def test_query_never_matches_itself(self):
        ds = line_dataset([1.0, 1.0, 5.0], [0, 0, 1])
        ms = find_matches(ds, [0], [0, 1, 2], k=2)
        assert 0 not in ms.matches[0]
        assert ms.matches.tolist() == [[1, 2]]

    def test_self_in_pool_reduces_capacity(self):
        ds = line_dataset([1.0, 2.0, 5.0], [0, 0, 1])
        with pytest.raises(InsufficientPoolError):
            find_matches(ds, [0], [0, 1, 2], k=3)

    def test_match_counts_track_usage(self, rng):
        ds = random_dataset(rng, n=24, p=2)
        treated = ds.treated_indices
        controls = ds.control_indices
        ms = find_matches(ds, treated, controls, k=3)
        assert ms.match_counts.sum() == 3 * len(treated)
        counts = ms.counts_by_unit(ds.n)
        assert counts[treated].sum() == 0

    def test_determinism(self, rng):
        ds = random_dataset(rng, n=20, p=2)
        a = find_matches(ds, ds.treated_indices, ds.control_indices, k=2)
        b = find_matches(ds, ds.treated_indices, ds.control_indices, k=2)
        assert np.array_equal(a.matches, b.matches)
        assert np.array_equal(a.match_counts, b.match_counts)

    def test_pool_permutation_leaves_matches_unchanged(self, rng):
        ds = random_dataset(rng, n=25, p=3)
        pool = ds.control_indices
        ms = find_matches(ds, ds.treated_indices, pool, k=3)
        permuted = rng.permutation(pool)
        ms_perm = find_matches(ds, ds.treated_indices, permuted, k=3)
        # matches carry original unit indices, so the full ordered lists agree
        assert np.array_equal(ms.matches, ms_perm.matches)

    def test_prefix_property(self, rng):
        ds = random_dataset(rng, n=30, p=2)
        small = find_matches(ds, ds.treated_indices, ds.control_indices, k=2)
        large = find_matches(ds, ds.treated_indices, ds.control_indices, k=5)
        assert np.array_equal(large.matches[:, :2], small.matches)

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_agrees_with_sorted_distance_oracle(self, seed):
        rng = np.random.default_rng(seed)
        ds = random_dataset(rng, n=50, p=4)
        treated = ds.treated_indices
        controls = ds.control_indices
        ms = find_matches(ds, treated, controls, k=4)
        expected = knn_oracle(ds.covariates, treated, controls, 4)
        assert ms.matches.tolist() == expected

    def test_exact_duplicates_resolved_by_index(self):
        ds = line_dataset([2.0, 3.0, 3.0, 0.0], [1, 0, 0, 0])
        ms = find_matches(ds, [0], [1, 2, 3], k=2)
        assert ms.matches.tolist() == [[1, 2]]

    def test_standardize_changes_metric(self):
        # second covariate dominates raw distances; standardizing rebalances
        x = np.array([[0.0, 0.0], [1.0, 5.0], [3.0, 1.0]])
        ds = Dataset(x, np.array([1, 0, 0]), np.zeros(3))
        raw = find_matches(ds, [0], [1, 2], k=1)
        scaled = find_matches(ds, [0], [1, 2], k=1, standardize=True)
        assert raw.matches[0, 0] == 2
        assert scaled.matches[0, 0] == 1

    def test_rank_pool_full_ordering(self, rng):
        ds = random_dataset(rng, n=15, p=2)
        treated = ds.treated_indices
        controls = ds.control_indices
        order = rank_pool_by_distance(ds, treated, controls)
        full = find_matches(ds, treated, controls, k=len(controls))
        assert np.array_equal(controls[order], full.matches)
