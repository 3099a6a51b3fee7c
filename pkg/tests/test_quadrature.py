import math

import numpy as np
import pytest
from scipy import integrate, special

from hiermaxent.quadrature import (
    ADAPTIVE_SIMPSON,
    TENSOR_GRID,
    QuadratureError,
    QuadratureSpec,
    log_adaptive_simpson,
    log_gauss_legendre,
    log_gauss_legendre_2d,
    log_integrate,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(rule="monte-carlo")
    with pytest.raises(ValueError):
        QuadratureSpec(rel_tol=0.0)
    with pytest.raises(ValueError):
        QuadratureSpec(max_depth=0)
    assert QuadratureSpec().rule == ADAPTIVE_SIMPSON


@pytest.mark.parametrize("rel_tol", [1e-6, 1e-9])
def test_huge_power_in_log_space(rel_tol):
    # integral of x^-100 over [1, 2] without ever leaving log space
    logf = lambda t, ids: -100.0 * np.log(t)  # noqa: E731
    exact = math.log((1.0 - 2.0**-99) / 99.0)
    out = log_adaptive_simpson(logf, [1.0], [2.0], rel_tol, 50)
    assert abs(math.expm1(out[0] - exact)) <= 10 * rel_tol


def test_underflowing_scale_is_handled():
    # exp(-1e4) underflows in double precision; the log result must not
    logf = lambda t, ids: -1e4 - 0.5 * t * t  # noqa: E731
    out = log_adaptive_simpson(logf, [-40.0], [40.0], 1e-10, 50)
    assert out[0] == pytest.approx(-1e4 + 0.5 * math.log(2 * math.pi), rel=1e-13)


def test_batched_integrals_are_independent():
    scale = np.array([0.01, 1.0, 30.0])
    logf = lambda t, ids: -0.5 * (t / scale[ids]) ** 2  # noqa: E731
    lo, hi = np.full(3, -200.0), np.full(3, 200.0)
    breaks = [[0.0], [0.0], [0.0]]
    out = log_adaptive_simpson(logf, lo, hi, 1e-9, 60, breaks=breaks)
    exact = np.log(scale * math.sqrt(2 * math.pi))
    assert np.allclose(out, exact, rtol=0, atol=1e-8)


def test_breakpoints_find_a_narrow_peak():
    logf = lambda t, ids: -0.5 * ((t - 3.217) / 1e-4) ** 2  # noqa: E731
    exact = math.log(1e-4 * math.sqrt(2 * math.pi))
    out = log_adaptive_simpson(logf, [-50.0], [50.0], 1e-9, 60, breaks=[3.217 + 1e-4 * np.arange(-8, 9)])
    assert out[0] == pytest.approx(exact, abs=1e-8)


def test_all_minus_infinity_integrand():
    logf = lambda t, ids: np.full(t.shape, -np.inf)  # noqa: E731
    assert np.isneginf(log_adaptive_simpson(logf, [0.0], [1.0], 1e-8, 20)[0])


def test_depth_limit_raises():
    # a jump with no breakpoint at it cannot meet a tiny tolerance in two levels
    logf = lambda t, ids: np.where(t < 0.3333, 0.0, 5.0)  # noqa: E731
    with pytest.raises(QuadratureError):
        log_adaptive_simpson(logf, [0.0], [1.0], 1e-12, 2, panels=3)


def test_gauss_legendre_matches_scipy():
    logf = lambda t, ids: np.log1p(t * t) - t  # noqa: E731
    ref, _ = integrate.quad(lambda t: (1 + t * t) * math.exp(-t), 0.0, 20.0, epsrel=1e-14)
    out = log_gauss_legendre(logf, [0.0], [20.0], 1e-12, 12)
    assert out[0] == pytest.approx(math.log(ref), abs=1e-12)


def test_tensor_grid_1d_through_dispatch():
    logf = lambda t, ids: -t  # noqa: E731
    out = log_integrate(logf, [0.0], [5.0], QuadratureSpec(TENSOR_GRID, 1e-12))
    assert out[0] == pytest.approx(math.log(-math.expm1(-5.0)), abs=1e-12)


def test_product_rule_factorises():
    # separable integrand: the 2-D result equals the sum of two 1-D logs
    logf = lambda u, v: -0.5 * (u - 1.0) ** 2 / 0.04 + special.log_ndtr(v) - 3.0 * v * v  # noqa: E731
    a, _ = integrate.quad(lambda u: math.exp(-0.5 * (u - 1.0) ** 2 / 0.04), -5.0, 5.0, points=[1.0], epsrel=1e-14)
    b, _ = integrate.quad(lambda v: special.ndtr(v) * math.exp(-3.0 * v * v), -4.0, 4.0, epsrel=1e-14)
    out = log_gauss_legendre_2d(logf, (-5.0, 5.0), (-4.0, 4.0), 1e-12, 8, outer_breaks=[1.0])
    assert out == pytest.approx(math.log(a) + math.log(b), abs=1e-11)


def test_product_rule_inner_breaks_follow_the_outer_node():
    # inner peak location depends on the outer coordinate
    width = 1e-3
    logf = lambda u, v: -0.5 * ((v - u) / width) ** 2  # noqa: E731
    exact = math.log(2.0 * width * math.sqrt(2 * math.pi))
    out = log_gauss_legendre_2d(
        logf, (-1.0, 1.0), (-3.0, 3.0), 1e-10, 8,
        inner_breaks=lambda u: u[:, None] + width * np.arange(-10, 11)[None, :],
    )
    assert out == pytest.approx(exact, abs=1e-9)


def test_product_rule_point_budget():
    logf = lambda u, v: np.where(u + v < 0.1234, 0.0, 1.0)  # noqa: E731
    with pytest.raises(QuadratureError):
        log_gauss_legendre_2d(logf, (0.0, 1.0), (0.0, 1.0), 1e-14, 8, max_points=100_000)
