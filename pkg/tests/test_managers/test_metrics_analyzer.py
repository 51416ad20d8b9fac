import math

import numpy as np
import pytest
from scipy import linalg
from scipy.stats import fisher_exact

from src.managers.metrics_analyzer import (
    ConfidenceBreakdown, Contingency2x2, FeatureSet, GaussianStats, MetricsAnalyzer, contingency_from_fractions,
    fid, fisher_exact_two_sided, gaussian_stats, improved_precision, improved_recall, inception_score,
    knn_radii, sfid, validate_prob_table,
)
from src.utils.errors import InsufficientDataError, NumericError, ParameterError, ShapeError, ValidationError


def spd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + 0.5 * np.eye(d)


def fid_oracle(mu1, s1, mu2, s2):
    covmean = linalg.sqrtm(s1 @ s2).real
    diff = mu1 - mu2
    return float(diff @ diff + np.trace(s1 + s2 - 2.0 * covmean))


def brute_radii(points, k):
    radii = []
    for i, p in enumerate(points):
        dists = sorted(math.dist(p, q) for j, q in enumerate(points) if j != i)
        radii.append(dists[k - 1])
    return radii


def brute_coverage(ref, query, k):
    radii = brute_radii(ref, k)
    inside = [any(math.dist(q, r) <= radius for r, radius in zip(ref, radii)) for q in query]
    return sum(inside) / len(inside)


class TestGaussianStats:
    def test_two_points(self):
        stats = gaussian_stats(FeatureSet([[0.0, 0.0], [2.0, 0.0]]))
        assert np.allclose(stats.mu, [1.0, 0.0])
        assert np.allclose(stats.sigma, [[2.0, 0.0], [0.0, 0.0]])

    def test_identical_rows(self):
        stats = gaussian_stats(FeatureSet(np.tile([1.0, 2.0, 3.0], (5, 1))))
        assert np.array_equal(stats.sigma, np.zeros((3, 3)))

    def test_monte_carlo(self):
        rng = np.random.default_rng(21)
        mu = np.array([1.0, -2.0, 0.5])
        sigma = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, -0.2], [0.0, -0.2, 0.5]])
        n = 100_000
        stats = gaussian_stats(FeatureSet(rng.multivariate_normal(mu, sigma, size=n)))
        assert np.all(np.abs(stats.mu - mu) <= 4 * np.sqrt(np.diag(sigma) / n))
        se = np.sqrt((np.outer(np.diag(sigma), np.diag(sigma)) + sigma ** 2) / n)
        assert np.all(np.abs(stats.sigma - sigma) <= 4 * se)

    def test_single_sample(self):
        with pytest.raises(InsufficientDataError):
            gaussian_stats(FeatureSet([[1.0, 2.0]]))

    def test_asymmetric_covariance(self):
        with pytest.raises(ValidationError):
            GaussianStats(np.zeros(2), [[1.0, 0.5], [0.0, 1.0]])


class TestFid:
    def test_identical(self):
        stats = GaussianStats(np.ones(3), np.eye(3))
        assert fid(stats, stats) == 0.0

    def test_scalar_mean_shift(self):
        assert fid(GaussianStats([0.0], [[1.0]]), GaussianStats([1.0], [[1.0]])) == pytest.approx(1.0, abs=1e-12)

    def test_scalar_variance(self):
        assert fid(GaussianStats([0.0], [[1.0]]), GaussianStats([0.0], [[4.0]])) == pytest.approx(1.0, abs=1e-12)

    def test_matches_sqrtm_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            mu1, mu2 = rng.standard_normal(5), rng.standard_normal(5)
            s1, s2 = spd(rng, 5), spd(rng, 5)
            expected = fid_oracle(mu1, s1, mu2, s2)
            assert fid(GaussianStats(mu1, s1), GaussianStats(mu2, s2)) == pytest.approx(expected, rel=1e-8)

    def test_symmetric_in_arguments(self):
        rng = np.random.default_rng(6)
        a = GaussianStats(rng.standard_normal(4), spd(rng, 4))
        b = GaussianStats(rng.standard_normal(4), spd(rng, 4))
        assert fid(a, b) == pytest.approx(fid(b, a), rel=1e-9)

    def test_singular_covariances(self):
        a = GaussianStats([0.0, 0.0], [[1.0, 0.0], [0.0, 0.0]])
        b = GaussianStats([0.0, 0.0], [[4.0, 0.0], [0.0, 0.0]])
        assert fid(a, b) == pytest.approx(1.0, abs=1e-9)

    def test_not_psd(self):
        with pytest.raises(NumericError):
            fid(GaussianStats([0.0], [[-1.0]]), GaussianStats([0.0], [[1.0]]))

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            fid(GaussianStats(np.zeros(2), np.eye(2)), GaussianStats(np.zeros(3), np.eye(3)))

    def test_empirical_gaussians_d8(self):
        rng = np.random.default_rng(123)
        mu1, mu2 = np.zeros(8), np.full(8, 0.7)
        s1, s2 = spd(rng, 8) / 4, spd(rng, 8) / 4
        expected = fid_oracle(mu1, s1, mu2, s2)
        real = FeatureSet(rng.multivariate_normal(mu1, s1, size=50_000))
        gen = FeatureSet(rng.multivariate_normal(mu2, s2, size=50_000))
        assert fid(gaussian_stats(real), gaussian_stats(gen)) == pytest.approx(expected, rel=0.05)


class TestSfid:
    def test_equals_fid_on_same_space(self, rng):
        real = FeatureSet(rng.standard_normal((100, 3)))
        gen = FeatureSet(rng.standard_normal((80, 3)) + 4.0)
        assert sfid(real, gen) == fid(gaussian_stats(real), gaussian_stats(gen))

    def test_identical_sets(self, rng):
        f = FeatureSet(rng.standard_normal((30, 4)), "spatial")
        assert sfid(f, f) == 0.0

    def test_space_mismatch(self, rng):
        with pytest.raises(ParameterError):
            sfid(FeatureSet(rng.standard_normal((5, 2)), "spatial"), FeatureSet(rng.standard_normal((5, 2))))


class TestInceptionScore:
    def test_uniform(self):
        assert inception_score(np.full((7, 4), 0.25)) == 1.0

    def test_balanced_one_hot(self):
        assert inception_score(np.eye(10)) == pytest.approx(10.0, abs=1e-9)

    def test_brute_force_kl(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            n, c = rng.integers(1, 12), rng.integers(2, 8)
            p = rng.dirichlet(np.ones(c), size=n)
            p[0, 0] = 0.0
            p[0] /= p[0].sum()
            marginal = [sum(p[i][j] for i in range(n)) / n for j in range(c)]
            kl = [sum(p[i][j] * math.log(p[i][j] / marginal[j]) for j in range(c) if p[i][j] > 0) for i in range(n)]
            expected = math.exp(max(0.0, sum(kl) / n))
            assert inception_score(p) == pytest.approx(expected, rel=1e-12)

    def test_rows_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            validate_prob_table([[0.5, 0.4]])
        with pytest.raises(ValidationError):
            validate_prob_table([[1.5, -0.5]])


class TestPrecisionRecall:
    def test_collinear_radii(self):
        assert knn_radii(FeatureSet([[0.0], [1.0], [3.0]]), 1).tolist() == [1.0, 1.0, 2.0]

    def test_duplicate_points(self):
        radii = knn_radii(FeatureSet([[2.0, 2.0], [2.0, 2.0], [5.0, 5.0]]), 1)
        assert radii[0] == 0.0 and radii[1] == 0.0

    def test_radii_match_full_sort(self, rng):
        points = rng.standard_normal((50, 4))
        assert np.allclose(knn_radii(FeatureSet(points), 3), brute_radii(points, 3), rtol=0, atol=1e-12)

    def test_k_too_large(self, rng):
        with pytest.raises(ParameterError):
            knn_radii(FeatureSet(rng.standard_normal((3, 2))), 3)

    def test_identical_sets(self, rng):
        f = FeatureSet(rng.standard_normal((25, 3)))
        assert improved_precision(f, f) == 1.0
        assert improved_recall(f, f) == 1.0

    def test_far_clusters(self, rng):
        real = FeatureSet(rng.standard_normal((20, 2)))
        gen = FeatureSet(rng.standard_normal((20, 2)) + 1000.0)
        assert improved_precision(real, gen) == 0.0
        assert improved_recall(real, gen) == 0.0

    def test_precision_never_decreases_with_k(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            real = FeatureSet(rng.standard_normal((30, 3)))
            gen = FeatureSet(rng.standard_normal((30, 3)) * 1.5 + 0.5)
            precision = [improved_precision(real, gen, k) for k in range(1, 11)]
            recall = [improved_recall(real, gen, k) for k in range(1, 11)]
            assert all(a <= b for a, b in zip(precision, precision[1:]))
            assert all(a <= b for a, b in zip(recall, recall[1:]))

    def test_brute_force_configurations(self):
        rng = np.random.default_rng(30)
        for _ in range(30):
            f = int(rng.integers(1, 9))
            n_real, n_gen = int(rng.integers(7, 51)), int(rng.integers(7, 51))
            k = int(rng.integers(1, 6))
            real = rng.standard_normal((n_real, f))
            gen = rng.standard_normal((n_gen, f)) * rng.uniform(0.5, 2.0) + rng.uniform(-1, 1)
            assert improved_precision(FeatureSet(real), FeatureSet(gen), k) == brute_coverage(real, gen, k)
            assert improved_recall(FeatureSet(real), FeatureSet(gen), k, threads=2) == brute_coverage(gen, real, k)


class TestFisher:
    def test_survey_tables(self):
        assert fisher_exact_two_sided(Contingency2x2(32, 8, 33, 7)) == 1.0
        assert fisher_exact_two_sided(Contingency2x2(17, 23, 23, 17)) == pytest.approx(0.26347, abs=5e-5)

    def test_identical_rows(self):
        for a, b in [(0, 5), (3, 9), (20, 20)]:
            assert fisher_exact_two_sided(Contingency2x2(a, b, a, b)) == 1.0

    def test_zero_margin(self):
        assert fisher_exact_two_sided(Contingency2x2(0, 0, 4, 6)) == 1.0

    def test_swap_invariance_and_range(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            a, b, c, d = (int(v) for v in rng.integers(0, 30, size=4))
            if a + b + c + d == 0:
                continue
            p = fisher_exact_two_sided(Contingency2x2(a, b, c, d))
            assert 0.0 < p <= 1.0
            assert fisher_exact_two_sided(Contingency2x2(d, c, b, a)) == pytest.approx(p, rel=1e-9)

    def test_matches_scipy(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b, c, d = (int(v) for v in rng.integers(1, 60, size=4))
            _, expected = fisher_exact([[a, b], [c, d]], alternative='two-sided')
            assert fisher_exact_two_sided(Contingency2x2(a, b, c, d)) == pytest.approx(expected, rel=1e-6)

    def test_large_counts_do_not_overflow(self):
        p = fisher_exact_two_sided(Contingency2x2(5000, 4000, 4000, 5000))
        assert 0.0 < p < 1e-10

    def test_invalid_cells(self):
        with pytest.raises(ValidationError):
            Contingency2x2(-1, 2, 3, 4)
        with pytest.raises(ValidationError):
            Contingency2x2(0, 0, 0, 0)

    def test_fractions_to_counts(self):
        assert contingency_from_fractions([0.8, 0.2, 0.825, 0.175]).as_list() == [32, 8, 33, 7]
        assert contingency_from_fractions([0.425, 0.575, 0.575, 0.425]).as_list() == [17, 23, 23, 17]
        with pytest.raises(ValidationError):
            contingency_from_fractions([0.81, 0.19, 0.8, 0.2])
        with pytest.raises(ParameterError):
            contingency_from_fractions([0.5, 0.5])


P1_CONFIDENCE = [0.75, 0.05, 0.175, 0.025, 0.775, 0.05, 0.125, 0.05]
P2_CONFIDENCE = [0.225, 0.2, 0.25, 0.325, 0.325, 0.25, 0.2, 0.225]


class TestConfidenceBreakdown:
    def test_collapses_to_survey_tables(self):
        p1 = ConfidenceBreakdown(P1_CONFIDENCE)
        p2 = ConfidenceBreakdown(P2_CONFIDENCE)
        assert p1.collapsed() == pytest.approx([0.8, 0.2, 0.825, 0.175])
        assert p1.contingency().as_list() == [32, 8, 33, 7]
        assert p2.contingency().as_list() == [17, 23, 23, 17]
        assert fisher_exact_two_sided(p2.contingency()) == pytest.approx(0.26347, abs=5e-5)

    def test_high_confidence_share(self):
        share = ConfidenceBreakdown(P1_CONFIDENCE).high_confidence_share()
        assert share['real'] == pytest.approx(0.75 / 0.8)
        assert share['synthetic'] == pytest.approx(0.05 / 0.175)
        assert share['synthetic'] < 0.5

    def test_no_correct_answers(self):
        share = ConfidenceBreakdown([0.0, 0.0, 0.5, 0.5, 1.0, 0.0, 0.0, 0.0]).high_confidence_share()
        assert share == {'real': None, 'synthetic': None}

    def test_invalid_fractions(self):
        with pytest.raises(ParameterError):
            ConfidenceBreakdown([0.5, 0.5, 0.0, 0.0])
        with pytest.raises(ValidationError):
            ConfidenceBreakdown([0.5, 0.5, 0.5, 0.5, 0.25, 0.25, 0.25, 0.25])
        with pytest.raises(ValidationError):
            ConfidenceBreakdown([1.5, -0.5, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25])


class TestMetricsAnalyzer:
    def test_report_for_identical_sets(self, logger, rng):
        f = FeatureSet(rng.standard_normal((40, 5)))
        report = MetricsAnalyzer(logger).evaluate(f, f, probs=np.eye(4))
        assert report['fid'] == 0.0 and report['sfid'] == 0.0
        assert report['precision'] == 1.0 and report['recall'] == 1.0
        assert report['is'] == pytest.approx(4.0)
        assert (report['k'], report['n_real'], report['n_gen']) == (3, 40, 40)

    def test_spatial_features_used_for_sfid(self, logger, rng):
        real = FeatureSet(rng.standard_normal((30, 3)))
        gen = FeatureSet(rng.standard_normal((30, 3)) + 1.0)
        rs = FeatureSet(rng.standard_normal((30, 2)), "spatial")
        gs = FeatureSet(rng.standard_normal((30, 2)) + 2.0, "spatial")
        report = MetricsAnalyzer(logger).evaluate(real, gen, rs, gs)
        assert report['sfid'] == sfid(rs, gs)
        assert report['is'] is None
        with pytest.raises(ParameterError):
            MetricsAnalyzer(logger).evaluate(real, gen, real_spatial=rs)

    def test_zscore_keeps_identical_sets_perfect(self, logger, rng):
        f = FeatureSet(rng.standard_normal((20, 3)) * [1.0, 100.0, 0.01])
        report = MetricsAnalyzer(logger, k=2, use_zscore=True).evaluate(f, f)
        assert report['precision'] == 1.0 and report['recall'] == 1.0

    def test_survey(self, logger):
        analyzer = MetricsAnalyzer(logger)
        results = analyzer.survey([Contingency2x2(32, 8, 33, 7), Contingency2x2(17, 23, 23, 17)])
        assert [r['rater'] for r in results] == [1, 2]
        assert results[1]['table'] == [17, 23, 23, 17]
        table = analyzer.survey_table(results)
        assert "P1" in table and "P2" in table and "1.00000" in table

    def test_survey_with_confidence(self, logger):
        analyzer = MetricsAnalyzer(logger)
        p1 = ConfidenceBreakdown(P1_CONFIDENCE)
        results = analyzer.survey([Contingency2x2(17, 23, 23, 17), p1.contingency()], [None, p1])
        assert 'confidence' not in results[0]
        assert results[1]['confidence']['real']['real_high'] == pytest.approx(0.75)
        table = analyzer.confidence_table(results)
        assert "P2" in table and "Real alta" in table and "P1" not in table
        with pytest.raises(ParameterError):
            analyzer.survey([p1.contingency()], [p1, p1])

    def test_report_table(self, logger):
        table = MetricsAnalyzer(logger).report_table({'is': None, 'fid': 1.5})
        assert "fid" in table and "-" in table
