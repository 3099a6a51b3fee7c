"""Numerical checks that a hierarchical mixture depends on x only through its statistics.

The marginal ``p(x) = integral p(h) p(x | h) dh`` is evaluated by log-space
quadrature over the hyperparameters (at most two).  The integrand sums the
per-coordinate conditional log densities of ``x`` in storage order, so it
never assumes that only the statistics matter; the statistics are used only
to place quadrature nodes near the peak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, stats

from hiermaxent import _onedim
from hiermaxent.model_core import (
    LINK_EXPONENTIAL_MEAN,
    LINK_GAUSSIAN_MEAN_SD,
    MEAN,
    SUM,
    SUM_OF_SQUARES,
    HierarchicalModel,
    Statistic,
    UnsupportedModelError,
    coordinate_exponents,
    statistic_eval,
)
from hiermaxent.quadrature import (
    TENSOR_GRID,
    QuadratureError,
    QuadratureSpec,
    log_gauss_legendre_2d,
    log_integrate,
)

__all__ = [
    "QuadratureError",
    "QuadratureSpec",
    "implied_marginal_quadrature",
    "marginal_log_density",
    "sufficiency_check",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_HINT_SPREAD = np.arange(-12, 13)


# --------------------------------------------------------------------------
# conditional log densities written in terms of the sufficient statistics


def sufficient_statistics(m: HierarchicalModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array([statistic_eval(f, x, m.dimension) for f in m.features])


def _grouped_bounds(m: HierarchicalModel):
    """Distinct ``(lo, hi)`` coordinate bounds and their multiplicities."""
    groups: dict[tuple[float, float], int] = {}
    for l, h in zip(m.base.lower, m.base.upper):
        groups[(l, h)] = groups.get((l, h), 0) + 1
    return [(l, h, c) for (l, h), c in groups.items()]


def _log_z(m: HierarchicalModel, a, b) -> np.ndarray:
    out = 0.0
    for l, h, count in _grouped_bounds(m):
        out = out + count * _onedim.log_norm(a, b, l, h)
    return np.asarray(out)


def _gaussian_logpdf(m: HierarchicalModel, t, mu, sigma) -> np.ndarray:
    """``log p(x | mu, sigma)`` from ``t = (Sum, SumOfSquares)``.

    Uses ``sum (x_i - mu)^2 = S + n (xbar - mu)^2`` with ``S`` the centred
    sum of squares, so large ``1/sigma^2`` does not amplify the cancellation
    between ``lam . t`` and ``log Z``.  ``S`` itself is recovered as
    ``t2 - t1^2 / n`` and loses digits when the spread is small next to the
    mean; :func:`pointwise_log_density` avoids that.
    """
    n = m.dimension
    xbar = t[0] / n
    centred = max(t[1] - t[0] * t[0] / n, 0.0)
    quad = (centred + n * (xbar - mu) ** 2) / (2.0 * sigma * sigma)
    trunc = 0.0
    for l, h, count in _grouped_bounds(m):
        trunc = trunc + count * _onedim.log_ndtr_diff((l - mu) / sigma, (h - mu) / sigma)
    return -quad - n * (np.log(sigma) + _LOG_SQRT_2PI) - trunc


def conditional_log_density(m: HierarchicalModel, t, hyper) -> np.ndarray:
    """``log p(x | h)`` for rows of ``hyper``, given the statistics ``t`` of ``x``."""
    hyper = np.atleast_2d(np.asarray(hyper, dtype=float))
    if m.link == LINK_GAUSSIAN_MEAN_SD:
        return _gaussian_logpdf(m, t, hyper[:, 0], hyper[:, 1])
    lam = m.multipliers(hyper)
    a, b = coordinate_exponents(m.features, lam, m.dimension)
    if np.any(np.asarray(b) > 0):
        raise UnsupportedModelError("marginal density needs nonpositive quadratic multipliers")
    return -m.base.log_volume + lam @ t - _log_z(m, a, b)


_POINTWISE_ROWS = 4096


def pointwise_log_density(m: HierarchicalModel, x, hyper) -> np.ndarray:
    """``log p(x | h)`` for rows of ``hyper``, summing the data term coordinate by coordinate.

    Normalizers depend only on the box, so they are computed once per group
    of coordinates sharing bounds.
    """
    x = np.asarray(x, dtype=float)
    hyper = np.atleast_2d(np.asarray(hyper, dtype=float))
    groups = _grouped_bounds(m)
    out = np.empty(hyper.shape[0])
    for start in range(0, hyper.shape[0], _POINTWISE_ROWS):
        h = hyper[start : start + _POINTWISE_ROWS]
        norm = np.zeros(h.shape[0])
        if m.link == LINK_GAUSSIAN_MEAN_SD:
            mu, sigma = h[:, 0], h[:, 1]
            d = x[None, :] - mu[:, None]
            data = -0.5 * np.einsum("ij,ij->i", d, d) / (sigma * sigma)
            for l, u, count in groups:
                norm += count * _onedim.log_ndtr_diff((l - mu) / sigma, (u - mu) / sigma)
            norm += m.dimension * (np.log(sigma) + _LOG_SQRT_2PI)
        else:
            a, b = coordinate_exponents(m.features, m.multipliers(h), m.dimension)
            a, b = np.broadcast_to(a, h.shape[:1]), np.broadcast_to(b, h.shape[:1])
            if np.any(b > 0):
                raise UnsupportedModelError("marginal density needs nonpositive quadratic multipliers")
            data = np.sum(a[:, None] * x[None, :] + b[:, None] * (x * x)[None, :], axis=1)
            for l, u, count in groups:
                norm += count * (_onedim.log_norm(a, b, l, u) + math.log(u - l))
        out[start : start + h.shape[0]] = data - norm
    return out


# --------------------------------------------------------------------------
# hyperparameter integration


def _free_components(m: HierarchicalModel):
    comps = m.hyperprior.components
    free = [j for j, c in enumerate(comps) if c.coord_bounds[0] < c.coord_bounds[1]]
    point = np.array([c.from_coord(c.coord_bounds[0]) for c in comps], dtype=float)
    log_prior = -math.fsum(math.log(comps[j].coord_bounds[1] - comps[j].coord_bounds[0]) for j in free)
    return free, point, log_prior


def _hints(m: HierarchicalModel, t, j: int, fixed: dict[int, np.ndarray] | None = None):
    """Breakpoints along free component ``j`` near where ``p(x | h)`` peaks."""
    n = m.dimension
    if m.link == LINK_EXPONENTIAL_MEAN and t[0] > 0:
        return math.log(t[0]) + _HINT_SPREAD / math.sqrt(n)
    if m.link == LINK_GAUSSIAN_MEAN_SD:
        xbar = t[0] / n
        if j == 0:
            sigma = fixed.get(1) if fixed else None
            if sigma is None:
                return None
            return xbar + _HINT_SPREAD[None, :] * (np.asarray(sigma)[:, None] / math.sqrt(n))
        spread = max(t[1] - t[0] * t[0] / n, 0.0) / n
        if spread > 0:
            return 0.5 * math.log(spread) + _HINT_SPREAD / math.sqrt(2.0 * n)
    return None


def _integrate_hyper(m: HierarchicalModel, logp_point, t, q: QuadratureSpec) -> float:
    """log of ``integral p(h) exp(logp_point(h)) dh`` over the free hyperparameters."""
    free, point, log_prior = _free_components(m)
    comps = m.hyperprior.components
    if not free:
        return float(logp_point(point[None, :])[0])
    if len(free) == 1:
        if q.rule == TENSOR_GRID:
            raise ValueError("tensor-grid quadrature is for 2-D hyperparameter spaces")
        j = free[0]
        comp = comps[j]

        def logf(u, ids):
            h = np.tile(point, (u.size, 1))
            h[:, j] = comp.from_coord(u)
            return log_prior + logp_point(h)

        lo, hi = comp.coord_bounds
        hint = _hints(m, t, j)
        out = log_integrate(logf, [lo], [hi], q, None if hint is None else [hint], panels=32)
        return float(out[0])

    if len(free) != 2:
        raise UnsupportedModelError("at most two hyperparameters can be integrated")
    # outer over the second free component, inner over the first
    j_in, j_out = free
    c_in, c_out = comps[j_in], comps[j_out]
    if q.rule == TENSOR_GRID:

        def logf2(u_out, u_in):
            h = np.tile(point, (u_out.size, 1))
            h[:, j_in] = c_in.from_coord(u_in)
            h[:, j_out] = c_out.from_coord(u_out)
            return logp_point(h)

        return log_prior + log_gauss_legendre_2d(
            logf2,
            c_out.coord_bounds,
            c_in.coord_bounds,
            q.rel_tol,
            min(q.max_depth, 8),
            outer_breaks=_hints(m, t, j_out),
            inner_breaks=lambda u: _hints(m, t, j_in, {j_out: c_out.from_coord(u)}),
        )

    inner_spec = QuadratureSpec(q.rule, q.rel_tol / 10.0, q.max_depth)

    def outer(u_out, ids_out):
        v_out = c_out.from_coord(u_out)
        size = u_out.size

        def inner(u_in, ids):
            h = np.tile(point, (u_in.size, 1))
            h[:, j_in] = c_in.from_coord(u_in)
            h[:, j_out] = v_out[ids]
            return logp_point(h)

        lo, hi = c_in.coord_bounds
        hint = _hints(m, t, j_in, {j_out: v_out})
        return log_prior + log_integrate(
            inner, np.full(size, lo), np.full(size, hi), inner_spec, hint, panels=16
        )

    lo, hi = c_out.coord_bounds
    hint = _hints(m, t, j_out)
    out = log_integrate(
        outer, [lo], [hi], q, None if hint is None else [hint], panels=16, noise=inner_spec.rel_tol
    )
    return float(out[0])


def marginal_log_density(m: HierarchicalModel, x, q: QuadratureSpec | None = None) -> float:
    """``log p(x)`` for the hierarchical mixture, ``-inf`` outside the box.

    Point hyperpriors reduce to the conditional log density.
    """
    q = QuadratureSpec() if q is None else q
    x = np.asarray(x, dtype=float)
    if x.shape != (m.dimension,):
        raise ValueError(f"expected a point of dimension {m.dimension}")
    if not m.base.contains(x):
        return -math.inf
    t = sufficient_statistics(m, x)
    return _integrate_hyper(m, lambda h: pointwise_log_density(m, x, h), t, q)


# --------------------------------------------------------------------------
# equal-statistic pairs


def _stats_match(m: HierarchicalModel, x, y) -> bool:
    tx, ty = sufficient_statistics(m, x), sufficient_statistics(m, y)
    return bool(np.all(np.abs(tx - ty) <= 1e-12 * np.maximum(1.0, np.abs(tx))))


def pair_differences(m: HierarchicalModel, pairs, q: QuadratureSpec | None = None) -> list[float]:
    """``|log p(x) - log p(x')|`` per pair; every pair must share its statistics."""
    q = QuadratureSpec() if q is None else q
    out = []
    for k, (x, y) in enumerate(pairs):
        if not _stats_match(m, x, y):
            raise ValueError(f"pair {k} does not have equal sufficient statistics")
        lx = marginal_log_density(m, x, q)
        ly = marginal_log_density(m, y, q)
        if not (math.isfinite(lx) and math.isfinite(ly)):
            raise ValueError(f"pair {k} has a point outside the support")
        out.append(abs(lx - ly))
    return out


def sufficiency_check(m: HierarchicalModel, pairs, q: QuadratureSpec | None = None) -> float:
    """Largest log-density gap over pairs with equal sufficient statistics.

    The mixture depends on ``x`` only through its statistics iff this stays
    within ``2 * q.rel_tol``.
    """
    diffs = pair_differences(m, pairs, q)
    return max(diffs) if diffs else 0.0


def permutation_pair(x, rng: np.random.Generator):
    x = np.asarray(x, dtype=float)
    return x, x[rng.permutation(x.size)]


def rotation_pair(x, rng: np.random.Generator, m: HierarchicalModel, attempts: int = 100):
    """Rotate three coordinates about their centroid, inside the plane orthogonal to (1,1,1).

    Preserves Sum, Mean and SumOfSquares.  Retries until the image stays in
    the box.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 3:
        raise ValueError("rotation pairs need at least three coordinates")
    e1 = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
    e2 = np.array([1.0, 1.0, -2.0]) / math.sqrt(6.0)
    for _ in range(attempts):
        idx = rng.choice(x.size, size=3, replace=False)
        v = x[idx]
        c = v.mean()
        d = v - c
        c1, c2 = d @ e1, d @ e2
        theta = rng.uniform(0.2, 2.0 * math.pi - 0.2)
        r1 = c1 * math.cos(theta) - c2 * math.sin(theta)
        r2 = c1 * math.sin(theta) + c2 * math.cos(theta)
        y = x.copy()
        y[idx] = c + r1 * e1 + r2 * e2
        if m.base.contains(y) and not np.array_equal(np.sort(y), np.sort(x)) and _stats_match(m, x, y):
            return x, y
    raise ValueError("could not find an in-box rotation with matching statistics")


def transfer_pair(x, rng: np.random.Generator, m: HierarchicalModel, attempts: int = 100):
    """Move mass between two coordinates; preserves Sum and Mean but not SumOfSquares."""
    if any(f.kind == SUM_OF_SQUARES for f in m.features):
        raise ValueError("transfer pairs change the sum of squares")
    x = np.asarray(x, dtype=float)
    lo, hi = m.base.lo, m.base.hi
    for _ in range(attempts):
        i, j = rng.choice(x.size, size=2, replace=False)
        room = min(x[i] - lo[i], hi[j] - x[j])
        if room <= 0:
            continue
        delta = rng.uniform(0.1, 0.9) * room
        y = x.copy()
        y[i] -= delta
        y[j] += delta
        if _stats_match(m, x, y):
            return x, y
    raise ValueError("could not find a statistic-preserving transfer")


def negative_control_pair(x, m: HierarchicalModel):
    """A pair whose statistics differ enough that the log densities must differ.

    Mean-only models shift every coordinate so the mean moves by
    ``max(0.1, 0.1 * mean)``; models with SumOfSquares shrink deviations from
    the mean by 1/1.1, changing the sum of squares at fixed sum.
    """
    x = np.asarray(x, dtype=float)
    kinds = {f.kind for f in m.features}
    if SUM_OF_SQUARES in kinds:
        c = x.mean()
        y = c + (x - c) / 1.1
        return x, y
    gap = max(0.1, 0.1 * float(x.mean()))
    y = x + gap
    if not m.base.contains(y):
        y = x - gap
    if not m.base.contains(y):
        raise ValueError("no room in the box for a negative-control shift")
    return x, y


# --------------------------------------------------------------------------
# implied marginal of a statistic


def _log_density_t_given_hyper(m: HierarchicalModel, f: Statistic, t: np.ndarray, hyper: np.ndarray):
    """Closed-form (or CLT/untruncated) law of ``f`` given the hyperparameters."""
    n = m.dimension
    if m.link == LINK_EXPONENTIAL_MEAN and f.kind in (MEAN, SUM):
        mu = hyper[:, 0]
        scale = mu / n if f.kind == MEAN else mu
        # the truncation at the box edge is ignored: the Gamma law is exact up to exp(-hi/mu)
        return stats.gamma.logpdf(t, a=n, scale=scale)
    if m.link == LINK_GAUSSIAN_MEAN_SD and f.kind in (MEAN, SUM):
        mu, sigma = hyper[:, 0], hyper[:, 1]
        lam1, lam2 = mu / sigma**2, -0.5 / sigma**2
        loc = np.zeros(mu.shape)
        var = np.zeros(mu.shape)
        for l, h, count in _grouped_bounds(m):
            a1, a2 = _onedim.moments(lam1, lam2, l, h)
            loc = loc + count * a1
            var = var + count * np.maximum(a2 - a1 * a1, 0.0)
        sd = np.sqrt(np.maximum(var, 1e-300))
        if f.kind == MEAN:
            loc, sd = loc / n, sd / n
        return stats.norm.logpdf(t, loc=loc, scale=sd)
    if m.link == LINK_GAUSSIAN_MEAN_SD and f.kind == SUM_OF_SQUARES:
        mu, sigma = hyper[:, 0], hyper[:, 1]
        # untruncated scaled noncentral chi-square
        return stats.ncx2.logpdf(t / sigma**2, df=n, nc=n * mu**2 / sigma**2) - 2.0 * np.log(sigma)
    raise UnsupportedModelError(f"no conditional law for {f.kind} under link {m.link}")


def implied_marginal_quadrature(
    m: HierarchicalModel,
    f: Statistic,
    grid,
    q: QuadratureSpec | None = None,
    transform: str = "identity",
    normalize: bool = True,
) -> np.ndarray:
    """Density of ``transform(f(x))`` on ``grid``, integrating over the hyperprior.

    With ``normalize`` the values are rescaled to integrate to one over the
    grid (trapezoid rule); a single-point grid returns ``[1.0]``.
    """
    q = QuadratureSpec() if q is None else q
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if transform == "log":
        t = np.exp(grid)
        jac = grid
    elif transform == "identity":
        t = grid
        jac = np.zeros(grid.shape)
    else:
        raise ValueError(f"unknown transform {transform!r}")

    free, point, log_prior = _free_components(m)
    comps = m.hyperprior.components
    if not free:
        logd = _log_density_t_given_hyper(m, f, t, np.tile(point, (t.size, 1))) + jac
    elif len(free) == 1:
        if q.rule == TENSOR_GRID:
            raise ValueError("tensor-grid quadrature is for 2-D hyperparameter spaces")
        j = free[0]
        comp = comps[j]

        def logf(u, ids):
            h = np.tile(point, (u.size, 1))
            h[:, j] = comp.from_coord(u)
            return log_prior + _log_density_t_given_hyper(m, f, t[ids], h)

        lo, hi = comp.coord_bounds
        breaks = None
        if m.link == LINK_EXPONENTIAL_MEAN:
            scale = 1.0 if f.kind == MEAN else 1.0 / m.dimension
            breaks = [
                np.log(tt * scale) + _HINT_SPREAD / math.sqrt(m.dimension) if tt > 0 else None
                for tt in t
            ]
        logd = log_integrate(logf, np.full(t.size, lo), np.full(t.size, hi), q, breaks, panels=32) + jac
    else:
        logd = np.array(
            [
                _integrate_hyper(
                    m,
                    lambda h, tt=tt: _log_density_t_given_hyper(m, f, np.full(h.shape[0], tt), h),
                    _pseudo_stats(m, f, tt),
                    q,
                )
                for tt in t
            ]
        ) + jac
    dens = np.exp(logd)
    if not normalize:
        return dens
    if dens.size == 1:
        return np.ones(1)
    area = integrate.trapezoid(dens, grid)
    if not area > 0:
        raise ValueError("implied density vanishes on the grid")
    return dens / area


def _pseudo_stats(m: HierarchicalModel, f: Statistic, tt: float) -> np.ndarray:
    """Statistics used only to place quadrature hints for a 2-D implied marginal."""
    n = m.dimension
    if f.kind == SUM:
        return np.array([tt, 0.0])
    if f.kind == MEAN:
        return np.array([tt * n, 0.0])
    return np.array([0.0, tt])


def implied_bin_probabilities(
    m: HierarchicalModel,
    f: Statistic,
    edges,
    q: QuadratureSpec | None = None,
    transform: str = "identity",
    sub: int = 8,
) -> np.ndarray:
    """Probability of each bin of ``transform(f(x))``, by Simpson's rule on the density."""
    edges = np.asarray(edges, dtype=float)
    if sub % 2:
        raise ValueError("sub must be even")
    fine = np.concatenate(
        [np.linspace(a, b, sub + 1)[:-1] for a, b in zip(edges[:-1], edges[1:])] + [edges[-1:]]
    )
    dens = implied_marginal_quadrature(m, f, fine, q, transform, normalize=False)
    probs = np.empty(edges.size - 1)
    w = np.ones(sub + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    for k in range(edges.size - 1):
        seg = dens[k * sub : k * sub + sub + 1]
        probs[k] = (edges[k + 1] - edges[k]) / (3.0 * sub) * float(w @ seg)
    return probs


@dataclass
class SufficiencyReport:
    rel_tol: float
    differences: list[float] = field(default_factory=list)
    kinds: list[str] = field(default_factory=list)
    control_differences: list[float] = field(default_factory=list)

    @property
    def max_difference(self) -> float:
        return max(self.differences) if self.differences else 0.0

    @property
    def sufficiency_passed(self) -> bool:
        return self.max_difference <= 2.0 * self.rel_tol

    @property
    def controls_passed(self) -> bool:
        return bool(self.control_differences) and min(self.control_differences) >= 1.0

    @property
    def passed(self) -> bool:
        return self.sufficiency_passed and self.controls_passed


def build_pairs(
    m: HierarchicalModel, points: Sequence[np.ndarray], count: int, rng: np.random.Generator
):
    """``count`` equal-statistic pairs cycling through the available constructions."""
    kinds = ["permutation", "rotation"]
    if not any(f.kind == SUM_OF_SQUARES for f in m.features):
        kinds.append("transfer")
    pairs, labels = [], []
    for k in range(count):
        x = points[k % len(points)]
        kind = kinds[k % len(kinds)]
        if kind == "permutation":
            pairs.append(permutation_pair(x, rng))
        elif kind == "rotation":
            pairs.append(rotation_pair(x, rng, m))
        else:
            pairs.append(transfer_pair(x, rng, m))
        labels.append(kind)
    return pairs, labels


def run_sufficiency(
    m: HierarchicalModel,
    points: Sequence[np.ndarray],
    pairs: int,
    controls: int,
    q: QuadratureSpec,
    rng: np.random.Generator,
) -> tuple[SufficiencyReport, list]:
    """Equal-statistic pairs plus negative controls, evaluated into a report."""
    pair_list, labels = build_pairs(m, points, pairs, rng)
    report = SufficiencyReport(rel_tol=q.rel_tol, kinds=labels)
    report.differences = pair_differences(m, pair_list, q)
    for k in range(controls):
        x, y = negative_control_pair(points[k % len(points)], m)
        report.control_differences.append(
            abs(marginal_log_density(m, x, q) - marginal_log_density(m, y, q))
        )
    return report, pair_list
