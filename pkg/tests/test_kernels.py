import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcreg.kernels import (
    GAUSSIAN_MEDIAN,
    LINEAR,
    KernelSpec,
    dhsic,
    dhsic_from_kernels,
    dhsic_subsets,
    gaussian_kernel_matrix,
    hsic,
    hsic_from_kernels,
    kernel_matrix,
    mean_pairwise_hsic,
    median_bandwidth,
    permutation_test,
)
from vcreg.numerics import make_rng


def centering(n):
    return np.eye(n) - np.ones((n, n)) / n


def hsic_four_products(K1, K2, denom):
    H = centering(len(K1))
    return np.trace(K1 @ H @ K2 @ H) / denom


def dhsic_triple_loop(Ks):
    """Naive evaluation of the three-term V-statistic with explicit index sums."""
    n = Ks[0].shape[0]
    d = len(Ks)
    t1 = sum(np.prod([K[i, j] for K in Ks]) for i in range(n) for j in range(n)) / n**2
    t2 = np.prod([sum(K[i, j] for i in range(n) for j in range(n)) for K in Ks]) / n ** (2 * d)
    t3 = 2.0 * sum(np.prod([sum(K[i, j] for j in range(n)) for K in Ks]) for i in range(n)) / n ** (d + 1)
    return t1 + t2 - t3


class TestGaussianKernel:
    def test_identical_rows_give_ones(self):
        np.testing.assert_array_equal(gaussian_kernel_matrix(np.ones((4, 2)), 0.7), np.ones((4, 4)))

    def test_unsquared_distance_hand_value(self):
        K = gaussian_kernel_matrix(np.array([[0.0], [2.0]]), 1.0)
        assert K[0, 1] == pytest.approx(np.exp(-1.0), rel=1e-15)
        assert K[0, 1] == pytest.approx(0.367879, abs=1e-6)

    def test_saturates_for_large_sigma(self):
        X = make_rng(0).uniform(-1, 1, size=(10, 3))
        np.testing.assert_allclose(gaussian_kernel_matrix(X, 1e6), 1.0, atol=1e-6)

    def test_multivariate_uses_euclidean_norm(self):
        K = gaussian_kernel_matrix(np.array([[0.0, 0.0], [3.0, 4.0]]), 1.0)
        assert K[0, 1] == pytest.approx(np.exp(-5.0 / 2.0))

    @pytest.mark.parametrize("sigma", [0.0, -1.0, np.inf])
    def test_rejects_bad_sigma(self, sigma):
        with pytest.raises(ValueError):
            gaussian_kernel_matrix(np.zeros((2, 1)), sigma)


class TestMedianBandwidth:
    def test_single_pair(self):
        assert median_bandwidth(np.array([[0.0], [2.0]])) == 2.0

    def test_three_pairs(self):
        assert median_bandwidth(np.array([[0.0], [1.0], [3.0]])) == 2.0

    def test_homogeneous(self):
        X = make_rng(1).standard_normal((30, 2))
        assert median_bandwidth(3.5 * X) == pytest.approx(3.5 * median_bandwidth(X), rel=1e-12)

    def test_degenerate(self):
        with pytest.raises(ValueError, match="degenerate bandwidth"):
            median_bandwidth(np.ones((5, 1)))


class TestHsic:
    def test_constant_argument_gives_zero(self):
        X = make_rng(2).standard_normal((20, 1))
        assert hsic(X, np.ones(20), GAUSSIAN_MEDIAN, KernelSpec("gaussian", 1.0)).value == 0.0

    def test_matches_dense_oracle(self):
        X = make_rng(3).standard_normal((256, 1))
        res = hsic(X, X)
        s = median_bandwidth(X)
        K = gaussian_kernel_matrix(X, s)
        assert res.value > 0
        assert res.value == pytest.approx(hsic_four_products(K, K, 255.0**2), rel=1e-12)
        assert res.bandwidths == (s, s)

    def test_biased_normalization(self):
        rng = make_rng(4)
        X1, X2 = rng.standard_normal((40, 2)), rng.standard_normal((40, 1))
        u = hsic(X1, X2, normalization="unbiased").value
        b = hsic(X1, X2, normalization="biased").value
        assert b == pytest.approx(u * 39.0**2 / 40.0**2, rel=1e-12)

    def test_symmetric_in_arguments(self):
        rng = make_rng(5)
        X1, X2 = rng.standard_normal((50, 2)), rng.standard_normal((50, 3))
        assert hsic(X1, X2).value == pytest.approx(hsic(X2, X1).value, rel=1e-12)

    def test_joint_row_permutation_invariance(self):
        rng = make_rng(6)
        X1 = rng.standard_normal((60, 1))
        X2 = X1**2 + 0.1 * rng.standard_normal((60, 1))
        perm = rng.permutation(60)
        assert hsic(X1[perm], X2[perm]).value == pytest.approx(hsic(X1, X2).value, rel=1e-12)

    def test_mismatched_n(self):
        with pytest.raises(ValueError, match="sample counts differ"):
            hsic(np.zeros((5, 1)) + np.arange(5)[:, None], np.arange(6.0))

    def test_independent_below_null_quantile(self):
        # statistic is below the 95% permutation-null quantile for most independent draws
        rng = make_rng(7)
        below = 0
        for _ in range(20):
            X1, X2 = rng.standard_normal((512, 1)), rng.standard_normal((512, 1))
            K1, _ = kernel_matrix(X1)
            K2, _ = kernel_matrix(X2)
            obs = hsic_from_kernels(K1, K2)
            null = []
            for _ in range(60):
                p = rng.permutation(512)
                null.append(hsic_from_kernels(K1, K2[np.ix_(p, p)]))
            below += obs < np.quantile(null, 0.95)
        assert below >= 18

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(4, 30))
    def test_property_non_negative(self, seed, n):
        rng = make_rng(seed)
        assert hsic(rng.standard_normal((n, 2)), rng.standard_normal((n, 1))).value >= -1e-12


class TestHsicFromKernels:
    def test_all_ones_kernel(self):
        K = make_rng(8).standard_normal((6, 6))
        assert hsic_from_kernels(K + K.T, np.ones((6, 6))) == pytest.approx(0.0, abs=1e-14)

    def test_identity_kernels_two_samples(self):
        assert hsic_from_kernels(np.eye(2), np.eye(2)) == pytest.approx(1.0, rel=1e-15)

    def test_rank_one_kernels(self):
        rng = make_rng(9)
        v, w = rng.standard_normal(12), rng.standard_normal(12)
        H = centering(12)
        expected = (v @ H @ w) ** 2 / 11.0**2
        assert hsic_from_kernels(np.outer(v, v), np.outer(w, w)) == pytest.approx(expected, rel=1e-12)

    def test_asymmetric_kernel_rejected(self):
        K = np.eye(3)
        K[0, 1] = 1e-3
        with pytest.raises(ValueError, match="not symmetric"):
            hsic_from_kernels(K, np.eye(3))

    def test_precomputed_spec(self):
        rng = make_rng(10)
        X = rng.standard_normal((15, 2))
        K = X @ X.T
        via_spec = hsic(X, X, KernelSpec("precomputed", matrix=K), LINEAR).value
        assert via_spec == pytest.approx(hsic_from_kernels(K, K), rel=1e-12)


class TestDhsic:
    def test_two_variables_equal_biased_hsic(self):
        rng = make_rng(11)
        for _ in range(10):
            X1, X2 = rng.standard_normal((30, 2)), rng.standard_normal((30, 1))
            b = hsic(X1, X2, normalization="biased").value
            assert dhsic([X1, X2]) == pytest.approx(b, rel=1e-12, abs=1e-15)

    def test_constant_partner_gives_zero(self):
        x = make_rng(12).standard_normal(20)
        assert abs(dhsic([x, np.full(20, 3.0)], [GAUSSIAN_MEDIAN, KernelSpec("gaussian", 1.0)])) < 1e-12

    def test_constant_variable_drops_out(self):
        # with d >= 3 a constant kernel factor leaves the dHSIC of the other variables
        rng = make_rng(12)
        x = rng.standard_normal(20)
        Xs = [x, x**2, np.full(20, 3.0)]
        kernels = [GAUSSIAN_MEDIAN, GAUSSIAN_MEDIAN, KernelSpec("gaussian", 1.0)]
        assert dhsic(Xs, kernels) == pytest.approx(dhsic(Xs[:2]), rel=1e-12)

    def test_three_variables_match_triple_loop(self):
        rng = make_rng(13)
        Xs = [rng.standard_normal((64, 1)) for _ in range(3)]
        Ks = [kernel_matrix(X)[0] for X in Xs]
        assert dhsic(Xs) == pytest.approx(dhsic_triple_loop(Ks), rel=1e-12)

    def test_matrix_is_split_into_columns(self):
        X = make_rng(14).standard_normal((20, 3))
        assert dhsic(X) == dhsic([X[:, 0], X[:, 1], X[:, 2]])

    def test_sample_size_below_2d(self):
        with pytest.raises(ValueError, match="sample size below 2d"):
            dhsic(make_rng(15).standard_normal((5, 3)))

    def test_dependent_exceeds_independent(self):
        rng = make_rng(16)
        x = rng.standard_normal(200)
        indep = dhsic([x, rng.standard_normal(200), rng.standard_normal(200)])
        dep = dhsic([x, x**2, np.sin(3 * x)])
        assert dep > indep >= -1e-12

    def test_from_kernels_needs_two(self):
        with pytest.raises(ValueError):
            dhsic_from_kernels([np.eye(3)])


class TestPermutationTest:
    def test_alpha_one_always_rejects(self):
        rng = make_rng(17)
        res = permutation_test(rng.standard_normal(30), rng.standard_normal(30), alpha=1.0, rng=0)
        assert res.reject

    def test_perfect_dependence_rejects(self):
        rng = make_rng(18)
        rejects = 0
        for seed in range(20):
            x = rng.standard_normal(128)
            rejects += permutation_test(x, x, num_permutations=200, rng=seed).reject
        assert rejects == 20

    def test_p_value_formula_bounds(self):
        x = make_rng(19).standard_normal(40)
        res = permutation_test(x, x, num_permutations=99, rng=1)
        assert res.p_value == pytest.approx(1 / 100)
        assert res.num_permutations == 99

    def test_deterministic_given_seed(self):
        rng = make_rng(20)
        x, y = rng.standard_normal(50), rng.standard_normal(50)
        assert permutation_test(x, y, rng=5) == permutation_test(x, y, rng=5)

    def test_too_few_permutations(self):
        with pytest.raises(ValueError):
            permutation_test(np.arange(10.0), np.arange(10.0), num_permutations=49)

    def test_degenerate_bandwidth(self):
        with pytest.raises(ValueError, match="degenerate bandwidth"):
            permutation_test(np.arange(10.0), np.ones(10))


class TestProxyMetrics:
    def test_mean_pairwise_two_columns_is_hsic(self):
        R = make_rng(21).standard_normal((40, 3))
        assert mean_pairwise_hsic(R, 2) == pytest.approx(hsic(R[:, 0], R[:, 1]).value, rel=1e-12)

    def test_mean_pairwise_oracle_and_symmetry(self):
        R = make_rng(22).standard_normal((50, 4))
        pairs = [hsic(R[:, i], R[:, j]).value for i, j in itertools.combinations(range(4), 2)]
        assert mean_pairwise_hsic(R, 4) == pytest.approx(np.mean(pairs), rel=1e-12)
        assert mean_pairwise_hsic(R[:, [2, 0, 3, 1]], 4) == pytest.approx(np.mean(pairs), rel=1e-12)

    def test_duplicated_columns_score_higher(self):
        rng = make_rng(23)
        R = rng.standard_normal((512, 3))
        dup = np.column_stack([R[:, 0], R[:, 0], R[:, 0]])
        assert mean_pairwise_hsic(dup, 3) > mean_pairwise_hsic(R, 3)

    def test_constant_column_named(self):
        R = make_rng(24).standard_normal((20, 3))
        R[:, 1] = 0.0
        with pytest.raises(ValueError, match="column 1 is constant"):
            mean_pairwise_hsic(R, 3)

    def test_subsets_full_set(self):
        R = make_rng(25).standard_normal((30, 2))
        res = dhsic_subsets(R, 2, 1, rng=0)
        assert res.subsets == [(0, 1)]
        assert res.values[0] == pytest.approx(dhsic(R), rel=1e-12)

    def test_subsets_deterministic_and_sensitive(self):
        rng = make_rng(26)
        R = rng.standard_normal((256, 6))
        dup = np.repeat(R[:, :2], 3, axis=1)
        a = dhsic_subsets(R, 3, 20, rng=7)
        assert a == dhsic_subsets(R, 3, 20, rng=7)
        assert np.mean(dhsic_subsets(dup, 3, 20, rng=7).values) > np.mean(a.values)

    def test_subsets_sample_size(self):
        with pytest.raises(ValueError, match="sample size below 2d"):
            dhsic_subsets(np.arange(6.0).reshape(3, 2) ** 2, 2, 3)
