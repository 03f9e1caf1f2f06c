"""Tests for lecam.core.divergences."""

import numpy as np
import pytest
from scipy import stats

from lecam.core.divergences import (
    gaussian_kernel,
    linear_terms,
    median_heuristic,
    mmd2_linear,
    mmd2_unbiased,
    pearson_correlation,
    spearman_rank_correlation,
    tv_continuous,
    tv_discrete,
)
from lecam.core.kernels import RngStream
from lecam.errors import ValidationError

# =============================================================================
# Fixtures
# =============================================================================


@pytest.fixture
def random_dists(rng):
    return [rng.dirichlet(np.ones(6)) for _ in range(20)]


@pytest.fixture
def far_clusters():
    a = np.array([[0.0], [0.001], [0.002]])
    return a, a + 100.0


# =============================================================================
# Total variation
# =============================================================================


class TestTotalVariation:
    def test_disjoint_point_masses(self):
        assert tv_discrete([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)

    def test_identical(self):
        assert tv_discrete([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_half_l1(self):
        assert tv_discrete([0.2, 0.3, 0.5], [0.5, 0.3, 0.2]) == pytest.approx(0.3)

    def test_metric_axioms(self, random_dists):
        p, q, r = random_dists[:3]
        assert tv_discrete(p, q) == pytest.approx(tv_discrete(q, p))
        assert tv_discrete(p, r) <= tv_discrete(p, q) + tv_discrete(q, r) + 1e-12
        for d in random_dists:
            assert 0.0 <= tv_discrete(d, p) <= 1.0

    def test_bounded_loss_gap(self, random_dists, rng):
        """Expectations of a loss in [0, B] differ by at most B times TV."""
        bound = 3.0
        for p, q in zip(random_dists[::2], random_dists[1::2], strict=True):
            loss = rng.uniform(0.0, bound, p.size)
            assert abs(p @ loss - q @ loss) <= bound * tv_discrete(p, q) + 1e-12

    def test_unnormalized_rejected(self):
        with pytest.raises(ValidationError):
            tv_discrete([0.5, 0.6], [0.5, 0.5])

    def test_support_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            tv_discrete([1.0], [0.5, 0.5])

    def test_continuous_unit_shift(self):
        tv = tv_continuous(stats.norm(0, 1).pdf, stats.norm(1, 1).pdf, scale=1.0)
        assert tv == pytest.approx(2 * stats.norm.cdf(0.5) - 1, abs=1e-5)

    def test_continuous_needs_fine_grid(self):
        with pytest.raises(ValidationError):
            tv_continuous(stats.norm.pdf, stats.norm.pdf, scale=1.0, points=101)


# =============================================================================
# Kernel and MMD
# =============================================================================


class TestGaussianKernel:
    def test_same_point(self):
        assert gaussian_kernel([1.0, 2.0], [1.0, 2.0], 0.5) == 1.0

    def test_unit_distance(self):
        assert gaussian_kernel([0.0], [1.0], 1.0) == pytest.approx(np.exp(-0.5))

    @pytest.mark.parametrize("bw", [0.0, -1.0, np.inf])
    def test_bad_bandwidth(self, bw):
        with pytest.raises(ValidationError):
            gaussian_kernel([0.0], [1.0], bw)


class TestMmd:
    def test_symmetric(self, rng):
        a = rng.normal(size=(50, 2))
        b = rng.normal(0.5, 1.0, size=(60, 2))
        assert mmd2_unbiased(a, b, 1.0) == pytest.approx(mmd2_unbiased(b, a, 1.0), abs=1e-12)

    def test_far_clusters_near_two(self, far_clusters):
        a, b = far_clusters
        assert mmd2_unbiased(a, b, 1.0) == pytest.approx(2.0, abs=1e-4)

    def test_null_is_centered(self):
        """Same-distribution estimates average to zero within three standard errors."""
        values = []
        for seed in range(100):
            gen = np.random.default_rng(seed)
            values.append(mmd2_unbiased(gen.normal(size=(100, 1)), gen.normal(size=(100, 1)), 1.0))
        values = np.asarray(values)
        assert abs(values.mean()) < 3 * values.std(ddof=1) / np.sqrt(values.size)

    def test_detects_shift(self, rng):
        a = rng.normal(size=(500, 1))
        b = rng.normal(1.0, 1.0, size=(500, 1))
        assert mmd2_unbiased(a, b, 1.0) > 0.1

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValidationError):
            mmd2_unbiased(rng.normal(size=(5, 2)), rng.normal(size=(5, 3)), 1.0)

    def test_needs_two_points(self):
        with pytest.raises(ValidationError):
            mmd2_unbiased([[0.0]], [[1.0], [2.0]], 1.0)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            mmd2_unbiased(np.zeros((0, 1)), [[1.0], [2.0]], 1.0)


class TestLinearMmd:
    def test_far_clusters_near_two(self):
        a = np.zeros((4, 1))
        assert mmd2_linear(a, a + 100.0, 1.0) == pytest.approx(2.0)

    def test_requires_equal_even_sizes(self, rng):
        with pytest.raises(ValidationError):
            mmd2_linear(rng.normal(size=(4, 1)), rng.normal(size=(6, 1)), 1.0)
        with pytest.raises(ValidationError):
            mmd2_linear(rng.normal(size=(5, 1)), rng.normal(size=(5, 1)), 1.0)

    def test_agrees_with_unbiased(self, rng):
        a = rng.normal(size=(2000, 1))
        b = rng.normal(0.5, 1.0, size=(2000, 1))
        terms = linear_terms(a, b, 1.0)
        se = terms.std(ddof=1) / np.sqrt(terms.size)
        assert abs(mmd2_linear(a, b, 1.0) - mmd2_unbiased(a, b, 1.0)) < 3 * se

    def test_reseeded_means_agree(self):
        gaps = []
        for seed in range(50):
            gen = RngStream(seed).generator()
            a = gen.normal(size=(400, 2))
            b = gen.normal(0.3, 1.2, size=(400, 2))
            gaps.append(mmd2_linear(a, b, 1.0) - mmd2_unbiased(a, b, 1.0))
        gaps = np.asarray(gaps)
        assert abs(gaps.mean()) < 3 * gaps.std(ddof=1) / np.sqrt(gaps.size)


class TestMedianHeuristic:
    def test_two_points(self):
        assert median_heuristic([[0.0]], [[2.0]]) == pytest.approx(2.0)

    def test_identical_points_fall_back(self):
        assert median_heuristic(np.ones((3, 2)), np.ones((3, 2))) == 1.0

    def test_standard_normal(self, rng):
        """Median |X - Y| for independent N(0, 1) is sqrt(2) times the normal median."""
        med = median_heuristic(rng.normal(size=(2000, 1)), rng.normal(size=(2000, 1)))
        assert med == pytest.approx(np.sqrt(2) * stats.norm.ppf(0.75), rel=0.1)

    def test_subsample_is_deterministic(self, rng):
        a, b = rng.normal(size=(3000, 2)), rng.normal(size=(3000, 2))
        assert median_heuristic(a, b, seed=3) == median_heuristic(a, b, seed=3)


# =============================================================================
# Correlations
# =============================================================================


class TestCorrelations:
    def test_pearson_linear(self):
        assert pearson_correlation([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
        assert pearson_correlation([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_spearman_monotone(self):
        assert spearman_rank_correlation([1, 2, 3, 4], [1, 4, 9, 16]) == pytest.approx(1.0)

    def test_spearman_one_swap(self):
        assert spearman_rank_correlation([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]) == pytest.approx(0.8)

    def test_spearman_ties_use_average_ranks(self):
        assert spearman_rank_correlation([1, 2, 2, 3], [1, 2, 3, 4]) == pytest.approx(4.5 / np.sqrt(22.5))

    def test_zero_variance_rejected(self):
        with pytest.raises(ValidationError):
            pearson_correlation([1, 1, 1], [1, 2, 3])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            spearman_rank_correlation([1, 2, 3], [1, 2])
