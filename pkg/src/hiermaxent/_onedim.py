"""One-dimensional building blocks for exponent ``a*x + b*x**2`` on ``[lo, hi]``.

Every separable canonical distribution in this package factorises into
independent coordinates whose density is proportional to
``exp(a*x + b*x**2)`` on an interval.  ``b == 0`` is a truncated
exponential (uniform when ``a == 0``) and ``b < 0`` a truncated normal.
All functions broadcast over numpy arrays.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import integrate, special

_SQRT2 = np.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

# Below this value of theta*width the closed forms lose digits to cancellation.
_SERIES_CUTOFF = 1e-3


def trunc_exp_mean(theta, width):
    """Mean of the density proportional to ``exp(-theta*y)`` on ``[0, width]``."""
    theta = np.asarray(theta, dtype=float)
    width = np.asarray(width, dtype=float)
    s = theta * width
    small = np.abs(s) < _SERIES_CUTOFF
    s_safe = np.where(small, 1.0, s)
    theta_safe = np.where(small, 1.0, theta)
    with np.errstate(over="ignore"):
        closed = 1.0 / theta_safe - width / np.expm1(s_safe)
    series = width * (0.5 - s / 12.0 + s**3 / 720.0)
    out = np.where(small, series, closed)
    return out[()] if out.ndim == 0 else out


def trunc_exp_var(theta, width):
    """Variance of the density proportional to ``exp(-theta*y)`` on ``[0, width]``."""
    theta = np.asarray(theta, dtype=float)
    width = np.asarray(width, dtype=float)
    s = np.abs(theta * width)
    small = s < 1e-2
    s_safe = np.where(small, 1.0, s)
    # 1/s^2 - 1/(4 sinh^2(s/2)); the sinh term underflows harmlessly for large s
    with np.errstate(over="ignore"):
        closed = 1.0 / s_safe**2 - 0.25 / np.sinh(0.5 * s_safe) ** 2
    series = 1.0 / 12.0 - s**2 / 240.0 + s**4 / 6048.0
    out = width**2 * np.where(small, series, closed)
    return out[()] if out.ndim == 0 else out


def log_ndtr_diff(alpha, beta):
    """``log(Phi(beta) - Phi(alpha))`` for ``alpha < beta``, stable in both tails."""
    alpha, beta = np.broadcast_arrays(
        np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float)
    )
    # reflect so the interval never sits entirely in the upper tail
    flip = alpha + beta > 0
    lo = np.where(flip, -beta, alpha)
    hi = np.where(flip, -alpha, beta)
    out = np.empty(lo.shape)
    lower_tail = hi <= 0
    if np.any(lower_tail):
        la = special.log_ndtr(lo[lower_tail])
        lb = special.log_ndtr(hi[lower_tail])
        with np.errstate(divide="ignore"):
            out[lower_tail] = lb + np.log1p(-np.exp(la - lb))
    straddle = ~lower_tail
    if np.any(straddle):
        d = 0.5 * (special.erf(hi[straddle] / _SQRT2) - special.erf(lo[straddle] / _SQRT2))
        out[straddle] = np.log(d)
    return out[()] if out.ndim == 0 else out


def log_norm(a, b, lo, hi):
    """``log((1/(hi-lo)) * integral_lo^hi exp(a x + b x^2) dx)`` for ``b <= 0``.

    Arrays broadcast.  Raises for ``b > 0``; the caller routes that case to
    :func:`log_norm_quad`.
    """
    a, b, lo, hi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, lo, hi)))
    if np.any(b > 0):
        raise ValueError("closed form requires a nonpositive quadratic coefficient")
    width = hi - lo
    out = np.empty(a.shape)

    expo = b == 0
    if np.any(expo):
        ae, le, he, we = a[expo], lo[expo], hi[expo], width[expo]
        zero = ae == 0
        a_safe = np.where(zero, 1.0, ae)
        neg = ae < 0
        # anchor the exponent at the endpoint where it is largest
        anchor = np.where(neg, ae * le, ae * he)
        # np.where evaluates both branches; the unused one may overflow
        with np.errstate(over="ignore"):
            ratio = np.where(neg, np.expm1(ae * we) / a_safe, -np.expm1(-ae * we) / a_safe)
        val = np.where(zero, np.log(we), anchor + np.log(np.where(zero, 1.0, ratio)))
        out[expo] = val - np.log(we)

    gauss = ~expo
    if np.any(gauss):
        ag, bg, lg, hg, wg = a[gauss], b[gauss], lo[gauss], hi[gauss], width[gauss]
        sigma = np.sqrt(-0.5 / bg)
        mu = ag * sigma**2
        alpha = (lg - mu) / sigma
        beta = (hg - mu) / sigma
        out[gauss] = (
            0.5 * mu**2 / sigma**2
            + np.log(sigma)
            + _LOG_SQRT_2PI
            + log_ndtr_diff(alpha, beta)
            - np.log(wg)
        )
    return out[()] if out.ndim == 0 else out


def moments(a, b, lo, hi):
    """First and second raw moments ``(E[x], E[x^2])`` for ``b <= 0``."""
    a, b, lo, hi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, lo, hi)))
    if np.any(b > 0):
        raise ValueError("closed form requires a nonpositive quadratic coefficient")
    m1 = np.empty(a.shape)
    m2 = np.empty(a.shape)

    expo = b == 0
    if np.any(expo):
        ae, le, he = a[expo], lo[expo], hi[expo]
        we = he - le
        theta = np.abs(ae)
        tm = trunc_exp_mean(theta, we)
        mean = np.where(ae <= 0, le + tm, he - tm)
        m1[expo] = mean
        m2[expo] = trunc_exp_var(theta, we) + mean**2

    gauss = ~expo
    if np.any(gauss):
        ag, bg, lg, hg = a[gauss], b[gauss], lo[gauss], hi[gauss]
        sigma = np.sqrt(-0.5 / bg)
        mu = ag * sigma**2
        alpha = (lg - mu) / sigma
        beta = (hg - mu) / sigma
        log_d = log_ndtr_diff(alpha, beta)
        log_phi_a = -0.5 * alpha**2 - _LOG_SQRT_2PI
        log_phi_b = -0.5 * beta**2 - _LOG_SQRT_2PI
        ra = np.exp(log_phi_a - log_d)
        rb = np.exp(log_phi_b - log_d)
        ez = ra - rb
        ez2 = 1.0 + alpha * ra - beta * rb
        m1[gauss] = mu + sigma * ez
        m2[gauss] = mu**2 + 2.0 * mu * sigma * ez + sigma**2 * ez2
    if m1.ndim == 0:
        return m1[()], m2[()]
    return m1, m2


def _quad_shift(a, b, lo, hi):
    shift = max(a * lo + b * lo * lo, a * hi + b * hi * hi)
    if b < 0:
        vertex = -a / (2.0 * b)
        if lo < vertex < hi:
            shift = max(shift, a * vertex + b * vertex * vertex)
    return shift


def _quad_power(a, b, lo, hi, shift, power):
    # quad flags roundoff once it reaches machine precision; the value is still usable
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(
            lambda x: x**power * np.exp(a * x + b * x * x - shift),
            lo,
            hi,
            epsabs=0.0,
            epsrel=1e-12,
            limit=200,
        )
    return val


def log_norm_quad(a, b, lo, hi):
    """Quadrature fallback for :func:`log_norm`, scalar arguments, any sign of ``b``."""
    a, b, lo, hi = float(a), float(b), float(lo), float(hi)
    shift = _quad_shift(a, b, lo, hi)
    return shift + np.log(_quad_power(a, b, lo, hi, shift, 0)) - np.log(hi - lo)


def moments_quad(a, b, lo, hi):
    """Quadrature fallback for :func:`moments`, scalar arguments, any sign of ``b``."""
    a, b, lo, hi = float(a), float(b), float(lo), float(hi)
    shift = _quad_shift(a, b, lo, hi)
    z = _quad_power(a, b, lo, hi, shift, 0)
    return _quad_power(a, b, lo, hi, shift, 1) / z, _quad_power(a, b, lo, hi, shift, 2) / z
