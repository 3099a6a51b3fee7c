import math

import numpy as np
import pytest
from scipy import stats

from hiermaxent import (
    BoxPrior,
    CanonicalDistribution,
    HierarchicalModel,
    HistogramSummary,
    HyperPrior,
    LogUniform,
    ReferenceCdf,
    SeededStream,
    Statistic,
    UniformInterval,
    exponential_model,
    gaussian_model,
    implied_statistic_histogram,
    ks_statistic,
    link_gaussian,
    sample_conditional,
    sample_hierarchical,
    sample_hyper,
)
from hiermaxent.model_core import UnsupportedModelError
from hiermaxent.sampler import BLOCK_ROWS, Histogram2DSummary, implied_statistic_values


def canonical(n, lo, hi, feats, lam):
    return CanonicalDistribution(BoxPrior.cube(n, lo, hi), feats, lam)


class TestStreams:
    def test_same_seed_same_bits(self):
        a = SeededStream(7, 3).generator(2, 1).random(5)
        b = SeededStream(7, 3).generator(2, 1).random(5)
        assert np.array_equal(a, b)

    def test_distinct_keys_differ(self):
        base = SeededStream(7, 3).generator(2, 1).random(5)
        for other in (SeededStream(8, 3).generator(2, 1), SeededStream(7, 4).generator(2, 1),
                      SeededStream(7, 3).generator(3, 1), SeededStream(7, 3).generator(2, 0)):
            assert not np.array_equal(base, other.random(5))

    def test_invalid_seed(self):
        with pytest.raises(ValueError):
            SeededStream(-1)
        with pytest.raises(ValueError):
            SeededStream(2**64)

    def test_worker_count_does_not_change_output(self):
        m = gaussian_model(dimension=10)
        count = 3 * BLOCK_ROWS + 17
        one = sample_hierarchical(m, SeededStream(5), count, workers=1)
        four = sample_hierarchical(m, SeededStream(5), count, workers=4)
        assert np.array_equal(one, four)

    def test_prefix_stability(self):
        # the first rows do not depend on how many rows are requested
        m = exponential_model(dimension=5)
        short = sample_hierarchical(m, SeededStream(9), 100)
        long = sample_hierarchical(m, SeededStream(9), BLOCK_ROWS + 5)
        assert np.array_equal(short, long[:100])


class TestConditionalSamplers:
    def test_truncated_exponential_ks(self):
        d = canonical(1, 0.0, 100.0, (Statistic.sum(),), [-0.2])
        x = sample_conditional(d, SeededStream(1), 50_000)[:, 0]
        ref = stats.truncexpon(b=20.0, scale=5.0)
        assert stats.kstest(x, ref.cdf).pvalue > 1e-3

    def test_increasing_exponential_ks(self):
        d = canonical(1, -1.0, 2.0, (Statistic.sum(),), [1.5])
        x = sample_conditional(d, SeededStream(2), 50_000)[:, 0]
        norm = math.expm1(1.5 * 3.0)
        cdf = lambda v: np.expm1(1.5 * (v + 1.0)) / norm  # noqa: E731
        assert stats.kstest(x, cdf).pvalue > 1e-3

    def test_uniform_when_untilted(self):
        d = canonical(3, 2.0, 5.0, (Statistic.sum(),), [0.0])
        x = sample_conditional(d, SeededStream(3), 20_000).reshape(-1)
        assert stats.kstest(x, stats.uniform(2.0, 3.0).cdf).pvalue > 1e-3

    @pytest.mark.parametrize("mu,sigma,lo,hi", [(0.0, 1.0, -100.0, 100.0), (97.3, 0.01, -100.0, 100.0),
                                               (-300.0, 2.0, -100.0, 100.0), (0.5, 3.0, 0.0, 1.0)])
    def test_truncated_normal_ks(self, mu, sigma, lo, hi):
        lam = link_gaussian(mu, sigma)
        d = canonical(1, lo, hi, (Statistic.sum(), Statistic.sum_of_squares()), lam)
        x = sample_conditional(d, SeededStream(4), 30_000)[:, 0]
        assert np.all((x >= lo) & (x <= hi))
        ref = stats.truncnorm((lo - mu) / sigma, (hi - mu) / sigma, loc=mu, scale=sigma)
        if mu < -200:
            # far lower tail: mass piles up against the lower bound at scale sigma^2/|lo - mu|
            scale = sigma**2 / (lo - mu)
            assert np.all(x - lo < 40 * scale)
            assert stats.kstest((x - lo) / scale, stats.expon.cdf).pvalue > 1e-3
        else:
            assert stats.kstest(x, ref.cdf).pvalue > 1e-3

    def test_positive_quadratic_not_supported(self):
        d = canonical(1, -1.0, 1.0, (Statistic.sum_of_squares(),), [0.5])
        with pytest.raises(UnsupportedModelError):
            sample_conditional(d, SeededStream(1), 10)


class TestHierarchical:
    def test_hyperprior_marginals(self):
        h = HyperPrior((UniformInterval(-100, 100), LogUniform(-5, 5)))
        v = sample_hyper(h, SeededStream(11), 20_000)
        assert stats.kstest(v[:, 0], stats.uniform(-100, 200).cdf).pvalue > 1e-3
        assert stats.kstest(np.log(v[:, 1]), stats.uniform(-5, 10).cdf).pvalue > 1e-3

    def test_point_hyperprior_equals_conditional(self):
        m = HierarchicalModel(
            BoxPrior.cube(4, 0.0, 100.0), HyperPrior((LogUniform(math.log(5.0), math.log(5.0)),)),
            "exponential-mean", "TruncatedExponentialIID", (Statistic.mean(),),
        )
        x = sample_hierarchical(m, SeededStream(2), 500)
        y = sample_conditional(m.conditional([5.0]), SeededStream(2), 500)
        assert np.allclose(x, y, rtol=1e-12, atol=1e-12)

    def test_exponential_mean_given_mu_is_gamma(self):
        m = HierarchicalModel(
            BoxPrior.cube(100, 0.0, 1e4), HyperPrior((LogUniform(math.log(5.0), math.log(5.0)),)),
            "exponential-mean", "TruncatedExponentialIID", (Statistic.mean(),),
        )
        t = implied_statistic_values(m, Statistic.mean(), SeededStream(3), 20_000)
        assert stats.kstest(t, stats.gamma(a=100, scale=0.05).cdf).pvalue > 1e-3

    def test_uniform_box_statistics(self):
        t = implied_statistic_values(BoxPrior.cube(100, 0.0, 100.0), Statistic.mean(), SeededStream(1), 50_000)
        assert abs(t.mean() - 50.0) < 0.05
        assert t.std(ddof=1) == pytest.approx(100 / math.sqrt(1200), rel=0.02)


class TestKolmogorovSmirnov:
    @pytest.mark.parametrize("n", [1, 2, 17, 1000])
    def test_matches_scipy_uniform(self, n, rng):
        x = rng.uniform(-5, 5, size=n)
        ours = ks_statistic(x, ReferenceCdf.uniform(-5, 5))
        assert ours == pytest.approx(stats.kstest(x, stats.uniform(-5, 10).cdf).statistic, rel=1e-12, abs=1e-15)

    def test_matches_scipy_normal(self, rng):
        x = rng.normal(50, 3, size=777)
        ours = ks_statistic(x, ReferenceCdf.normal(50, 2.89))
        assert ours == pytest.approx(stats.kstest(x, stats.norm(50, 2.89).cdf).statistic, rel=1e-12)

    def test_out_of_support_samples(self):
        assert ks_statistic([10.0, 11.0], ReferenceCdf.uniform(0, 1)) == 1.0

    def test_reference_validation(self):
        with pytest.raises(ValueError):
            ReferenceCdf.uniform(1, 1)
        with pytest.raises(ValueError):
            ReferenceCdf.normal(0, 0)


class TestHistograms:
    def test_counts_and_density(self):
        h = HistogramSummary.from_values([0.0, 0.5, 1.0, 1.0], 2)
        assert h.counts.tolist() == [1, 3]
        assert np.allclose(h.densities, [0.5, 1.5])
        assert h.rows()[0] == (0.0, 0.5, 1, 0.5)

    def test_histogram_from_source(self):
        h = implied_statistic_histogram(BoxPrior.cube(10, 0.0, 1.0), Statistic.sum(), "identity", SeededStream(1), 1000, bins=20)
        assert h.total == 1000 and h.counts.size == 20
        assert np.sum(h.densities * h.widths) == pytest.approx(1.0)

    def test_log_transform_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            implied_statistic_histogram(BoxPrior.cube(2, -1.0, 1.0), Statistic.sum(), "log", SeededStream(1), 100, bins=5)

    def test_two_dimensional_rows(self):
        h = Histogram2DSummary.from_values([0.0, 1.0, 1.0], [0.0, 0.0, 1.0], 2)
        rows = h.rows()
        assert len(rows) == 4 and len(rows[0]) == 6
        assert sum(r[2] for r in rows) == 3
