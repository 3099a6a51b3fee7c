import math

import numpy as np
import pytest
from scipy import stats

from hiermaxent import (
    BoxPrior,
    HierarchicalModel,
    HyperPrior,
    LogUniform,
    QuadratureSpec,
    SeededStream,
    Statistic,
    UniformInterval,
    exponential_model,
    gaussian_model,
    implied_marginal_quadrature,
    link_exponential,
    marginal_log_density,
    sample_hierarchical,
    sufficiency_check,
)
from hiermaxent.quadrature import TENSOR_GRID
from hiermaxent.verification import (
    conditional_log_density,
    implied_bin_probabilities,
    negative_control_pair,
    pair_differences,
    pointwise_log_density,
    rotation_pair,
    run_sufficiency,
    sufficient_statistics,
    transfer_pair,
)


@pytest.fixture(scope="module")
def exp_model():
    return exponential_model()


@pytest.fixture(scope="module")
def gauss_model():
    return gaussian_model()


def point_gaussian(mu, sigma, n=5, bound=3.0):
    return HierarchicalModel(
        BoxPrior.cube(n, -bound, bound),
        HyperPrior((UniformInterval(mu, mu), LogUniform(math.log(sigma), math.log(sigma)))),
        "gaussian-mean-sd", "GaussianIID", (Statistic.sum(), Statistic.sum_of_squares()),
    )


class TestConditional:
    def test_gaussian_matches_truncnorm(self, rng):
        m = point_gaussian(0.7, 1.3)
        x = rng.uniform(-3, 3, size=5)
        ref = stats.truncnorm((-3 - 0.7) / 1.3, (3 - 0.7) / 1.3, loc=0.7, scale=1.3).logpdf(x).sum()
        got = conditional_log_density(m, sufficient_statistics(m, x), [[0.7, 1.3]])[0]
        assert got == pytest.approx(ref, rel=1e-12)

    def test_exponential_matches_truncexpon(self, rng):
        m = exponential_model(dimension=4, upper=100.0)
        x = rng.uniform(0, 100, size=4)
        theta = -link_exponential(20.0, 100.0)
        ref = stats.truncexpon(b=100 * theta, scale=1 / theta).logpdf(x).sum()
        got = conditional_log_density(m, sufficient_statistics(m, x), [[20.0]])[0]
        assert got == pytest.approx(ref, rel=1e-12)

    def test_point_hyperprior_marginal_is_conditional(self, rng):
        m = point_gaussian(0.2, 0.8)
        x = rng.uniform(-3, 3, size=5)
        got = marginal_log_density(m, x)
        assert got == pointwise_log_density(m, x, [[0.2, 0.8]])[0]
        assert got == pytest.approx(conditional_log_density(m, sufficient_statistics(m, x), [[0.2, 0.8]])[0], rel=1e-13)

    @pytest.mark.parametrize("model", [exponential_model, gaussian_model])
    def test_pointwise_agrees_with_statistics_form(self, model, rng):
        m = model()
        x = sample_hierarchical(m, SeededStream(8), 3)
        hyper = [[3.0], [40.0]] if m.link == "exponential-mean" else [[0.5, 20.0], [-10.0, 70.0]]
        for row in x:
            a = pointwise_log_density(m, row, hyper)
            b = conditional_log_density(m, sufficient_statistics(m, row), hyper)
            assert np.allclose(a, b, rtol=1e-12)

    def test_pointwise_tight_cluster_matches_truncnorm(self, rng):
        # spread 1e-2 around -92.6: the statistics form loses digits here, the pointwise form must not
        m = gaussian_model()
        x = -92.6 + 0.01 * rng.standard_normal(100)
        mu, sigma = float(x.mean()), float(x.std())
        ref = stats.truncnorm((-100 - mu) / sigma, (100 - mu) / sigma, loc=mu, scale=sigma).logpdf(x).sum()
        assert pointwise_log_density(m, x, [[mu, sigma]])[0] == pytest.approx(ref, rel=1e-13)


class TestMarginal:
    @pytest.mark.parametrize("rel_tol", [1e-6, 1e-8])
    def test_exponential_against_oracle(self, exp_model, oracles, rel_tol):
        ref = oracles["exponential_marginal"]
        xa = np.arange(1, 101) / 10
        xb = (np.arange(100) % 7) / 20 + 0.01
        assert xa.sum() == pytest.approx(ref["x_a_sum"]) and xb.sum() == pytest.approx(ref["x_b_sum"])
        q = QuadratureSpec(rel_tol=rel_tol)
        assert abs(marginal_log_density(exp_model, xa, q) - ref["x_a"]) <= 2 * rel_tol
        assert abs(marginal_log_density(exp_model, xb, q) - ref["x_b"]) <= 2 * rel_tol

    @pytest.mark.parametrize("rule", ["adaptive-simpson", "tensor-grid"])
    def test_gaussian_against_oracle(self, gauss_model, oracles, rule):
        x = np.arange(100) / 25 - 1
        got = marginal_log_density(gauss_model, x, QuadratureSpec(rule, 1e-6))
        assert abs(got - oracles["gaussian_marginal_linspace"]) <= 2e-6

    @pytest.mark.parametrize("model", [exponential_model, gaussian_model])
    def test_halving_tolerance_moves_less_than_previous_tolerance(self, model):
        m = model()
        tols = (1e-4, 5e-5, 2.5e-5, 1.25e-5, 1e-6 / 1.6)
        for x in sample_hierarchical(m, SeededStream(3), 4):
            values = [marginal_log_density(m, x, QuadratureSpec(rel_tol=tol)) for tol in tols]
            for k in range(1, len(tols)):
                assert abs(values[k] - values[k - 1]) < tols[k - 1]

    def test_outside_box(self, exp_model):
        x = np.full(100, 5.0)
        x[3] = -1.0
        assert marginal_log_density(exp_model, x) == -math.inf

    def test_dimension_checked(self, exp_model):
        with pytest.raises(ValueError):
            marginal_log_density(exp_model, np.ones(3))

    def test_tensor_grid_needs_two_hyperparameters(self, exp_model):
        with pytest.raises(ValueError):
            marginal_log_density(exp_model, np.full(100, 5.0), QuadratureSpec(TENSOR_GRID))
        with pytest.raises(ValueError):
            implied_marginal_quadrature(exp_model, Statistic.mean(), [1.0, 2.0], QuadratureSpec(TENSOR_GRID))


class TestPairs:
    def test_rotation_preserves_statistics(self, gauss_model, rng):
        x = sample_hierarchical(gauss_model, SeededStream(1), 1)[0]
        for _ in range(20):
            a, b = rotation_pair(x, rng, gauss_model)
            ta, tb = sufficient_statistics(gauss_model, a), sufficient_statistics(gauss_model, b)
            assert np.allclose(ta, tb, rtol=1e-12, atol=1e-12)
            assert not np.array_equal(np.sort(a), np.sort(b))

    def test_transfer_only_without_sum_of_squares(self, exp_model, gauss_model, rng):
        x = np.full(100, 5.0)
        a, b = transfer_pair(x, rng, exp_model)
        assert b.sum() == pytest.approx(a.sum(), rel=1e-12)
        with pytest.raises(ValueError):
            transfer_pair(x, rng, gauss_model)

    def test_mismatched_pair_rejected(self, exp_model):
        x = np.full(100, 5.0)
        with pytest.raises(ValueError):
            pair_differences(exp_model, [(x, x + 1.0)])

    def test_negative_controls_change_statistics(self, exp_model, gauss_model):
        x = np.arange(100) / 25 - 1
        a, b = negative_control_pair(x, gauss_model)
        assert a.sum() == pytest.approx(b.sum(), rel=1e-12)
        assert np.sum(b * b) < np.sum(a * a)
        a, b = negative_control_pair(np.full(100, 5.0), exp_model)
        assert b.mean() == pytest.approx(5.5)

    def test_small_sufficiency_run(self, exp_model):
        s = SeededStream(4)
        points = list(sample_hierarchical(exp_model, s, 3))
        report, pairs = run_sufficiency(exp_model, points, 6, 2, QuadratureSpec(rel_tol=1e-6), s.generator(0, 2))
        assert len(pairs) == 6 and set(report.kinds) == {"permutation", "rotation", "transfer"}
        assert report.passed
        assert sufficiency_check(exp_model, pairs, QuadratureSpec(rel_tol=1e-6)) == report.max_difference


class TestImpliedMarginal:
    def test_normalised_on_grid(self, exp_model):
        grid = np.linspace(-4, 4, 201)
        dens = implied_marginal_quadrature(exp_model, Statistic.mean(), grid, transform="log")
        assert np.sum((dens[1:] + dens[:-1]) / 2 * np.diff(grid)) == pytest.approx(1.0, rel=1e-12)

    def test_single_point_grid(self, exp_model):
        assert implied_marginal_quadrature(exp_model, Statistic.mean(), [1.0], transform="log").tolist() == [1.0]

    def test_point_hyperprior_gives_gamma(self):
        m = HierarchicalModel(
            BoxPrior.cube(10, 0.0, 1e4), HyperPrior((LogUniform(math.log(2.0), math.log(2.0)),)),
            "exponential-mean", "TruncatedExponentialIID", (Statistic.mean(),),
        )
        grid = np.linspace(0.5, 5.0, 7)
        dens = implied_marginal_quadrature(m, Statistic.mean(), grid, normalize=False)
        assert np.allclose(dens, stats.gamma(a=10, scale=0.2).pdf(grid), rtol=1e-12)

    def test_log_mean_is_uniform_in_the_interior(self, exp_model):
        # log mu uniform on (-5, 5) and the mean concentrates at mu, so the log-mean density is about 1/10 mid-range
        dens = implied_marginal_quadrature(exp_model, Statistic.mean(), [-1.0, 0.0, 1.0], transform="log", normalize=False)
        assert np.allclose(dens, 0.1, rtol=1e-6)

    def test_bin_probabilities_sum_to_one(self, exp_model):
        edges = np.linspace(-6, 6, 25)
        p = implied_bin_probabilities(exp_model, Statistic.mean(), edges, transform="log")
        assert p.sum() == pytest.approx(1.0, abs=1e-6)
        with pytest.raises(ValueError):
            implied_bin_probabilities(exp_model, Statistic.mean(), edges, transform="log", sub=3)

    def test_unknown_transform(self, exp_model):
        with pytest.raises(ValueError):
            implied_marginal_quadrature(exp_model, Statistic.mean(), [1.0, 2.0], transform="sqrt")
