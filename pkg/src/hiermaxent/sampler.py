"""Seedable Monte Carlo for hyperpriors, canonical conditionals and their mixtures.

Random numbers come from counter-based Philox generators keyed by
``(seed, stream_index, block, purpose)``.  Work is cut into fixed-size
blocks of rows, each with its own key, so any number of workers produces
the same bits.  Conditionals are sampled coordinate-wise by inverse CDF:
truncated exponential (uniform when the tilt is zero) or truncated normal.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from hiermaxent.model_core import (
    BoxPrior,
    CanonicalDistribution,
    HierarchicalModel,
    HyperPrior,
    LogUniform,
    Statistic,
    UnsupportedModelError,
    coordinate_exponents,
)

BLOCK_ROWS = 4096
_HYPER = 0
_POINTS = 1


@dataclass(frozen=True)
class SeededStream:
    """A reproducible random stream identified by ``(seed, stream_index)``."""

    seed: int
    stream_index: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64 or self.stream_index < 0:
            raise ValueError("seed must be a 64-bit unsigned integer and stream_index >= 0")

    def generator(self, block: int = 0, purpose: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_index, block, purpose))
        return np.random.Generator(np.random.Philox(seq))


def _blocks(count: int) -> list[tuple[int, int, int]]:
    if count <= 0:
        raise ValueError("count must be positive")
    return [
        (b, start, min(start + BLOCK_ROWS, count))
        for b, start in enumerate(range(0, count, BLOCK_ROWS))
    ]


def _run_blocks(fn: Callable[[int, int], np.ndarray], count: int, workers: int) -> list[np.ndarray]:
    """Apply ``fn(block, rows)`` to every block, in block order."""
    jobs = _blocks(count)
    if workers <= 1 or len(jobs) == 1:
        return [fn(b, stop - start) for b, start, stop in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(job[0], job[2] - job[1]), jobs))


# --------------------------------------------------------------------------
# inverse-CDF kernels


def _trunc_exp_icdf(u, a, lo, hi):
    """Inverse CDF of density ∝ exp(a x) on [lo, hi]; ``a`` broadcasts against ``u``."""
    w = hi - lo
    a_safe = np.where(a == 0, 1.0, a)
    # each branch overflows where the other applies
    with np.errstate(over="ignore", invalid="ignore"):
        left = lo + np.log1p(u * np.expm1(a_safe * w)) / a_safe
        right = hi + np.log1p((1.0 - u) * np.expm1(-a_safe * w)) / a_safe
    x = np.where(a < 0, left, right)
    x = np.where(a == 0, lo + u * w, x)
    return np.clip(x, lo, hi)


def _trunc_norm_icdf(u, mu, sigma, lo, hi):
    """Inverse CDF of Normal(mu, sigma^2) truncated to [lo, hi].

    Intervals in the upper tail are reflected to the lower tail; lower-tail
    intervals are inverted in log space (``log_ndtr``/``ndtri_exp``, which
    switch to complementary-error asymptotics far out), so standardised
    bounds in the thousands stay exact.
    """
    alpha = (lo - mu) / sigma
    beta = (hi - mu) / sigma
    alpha, beta, u = np.broadcast_arrays(alpha, beta, u)
    flip = alpha + beta > 0
    lo_z = np.where(flip, -beta, alpha)
    hi_z = np.where(flip, -alpha, beta)
    uu = np.where(flip, 1.0 - u, u)
    z = np.empty(lo_z.shape)

    tail = hi_z <= 0
    if np.any(tail):
        la = special.log_ndtr(lo_z[tail])
        lb = special.log_ndtr(hi_z[tail])
        ut = uu[tail]
        with np.errstate(divide="ignore"):
            logp = np.logaddexp(la + np.log1p(-ut), lb + np.log(ut))
        z[tail] = special.ndtri_exp(logp)
    mid = ~tail
    if np.any(mid):
        pa = special.ndtr(lo_z[mid])
        pb = special.ndtr(hi_z[mid])
        z[mid] = special.ndtri(pa + uu[mid] * (pb - pa))
    z = np.clip(z, lo_z, hi_z)
    z = np.where(flip, -z, z)
    return np.clip(mu + sigma * z, lo, hi)


def _draw_points(u, a, b, lo, hi):
    """Coordinates from uniforms ``u`` (rows x n) under per-row exponents ``(a, b)``."""
    a = np.broadcast_to(np.asarray(a, dtype=float), u.shape[:1])[:, None]
    b = np.broadcast_to(np.asarray(b, dtype=float), u.shape[:1])[:, None]
    if np.any(b > 0):
        raise UnsupportedModelError("no direct sampler for a positive quadratic tilt")
    x = np.empty(u.shape)
    expo = (b == 0)[:, 0]
    if np.any(expo):
        x[expo] = _trunc_exp_icdf(u[expo], a[expo], lo, hi)
    gauss = ~expo
    if np.any(gauss):
        sigma = np.sqrt(-0.5 / b[gauss])
        mu = a[gauss] * sigma**2
        x[gauss] = _trunc_norm_icdf(u[gauss], mu, sigma, lo, hi)
    return x


# --------------------------------------------------------------------------
# public samplers


def _hyper_block(h: HyperPrior, gen: np.random.Generator, rows: int) -> np.ndarray:
    u = gen.random((rows, h.dimension))
    out = np.empty_like(u)
    for j, comp in enumerate(h.components):
        lo, hi = comp.coord_bounds
        coord = lo + (hi - lo) * u[:, j]
        out[:, j] = np.exp(coord) if isinstance(comp, LogUniform) else coord
    return out


def sample_hyper(h: HyperPrior, s: SeededStream, count: int, workers: int = 1) -> np.ndarray:
    """``count`` independent hyperparameter draws, one row each."""
    parts = _run_blocks(lambda b, rows: _hyper_block(h, s.generator(b, _HYPER), rows), count, workers)
    return np.concatenate(parts)


def _check_supported(features):
    try:
        coordinate_exponents(features, np.zeros(len(features)), 1)
    except UnsupportedModelError:
        raise UnsupportedModelError(
            "direct sampling supports Mean, Sum and SumOfSquares features only"
        ) from None


def sample_conditional(
    d: CanonicalDistribution, s: SeededStream, count: int, workers: int = 1
) -> np.ndarray:
    """``count`` iid draws from a separable canonical distribution (rows)."""
    _check_supported(d.features)
    a, b = d.coordinate_exponent()
    lo, hi = d.base.lo, d.base.hi
    n = d.base.dimension

    def block(bi, rows):
        u = s.generator(bi, _POINTS).random((rows, n))
        return _draw_points(u, a, b, lo, hi)

    return np.concatenate(_run_blocks(block, count, workers))


def _hierarchical_block(m: HierarchicalModel, s: SeededStream, bi: int, rows: int) -> np.ndarray:
    hyper = _hyper_block(m.hyperprior, s.generator(bi, _HYPER), rows)
    lam = m.multipliers(hyper)
    a, b = coordinate_exponents(m.features, lam, m.dimension)
    u = s.generator(bi, _POINTS).random((rows, m.dimension))
    return _draw_points(u, a, b, m.base.lo, m.base.hi)


def sample_hierarchical(
    m: HierarchicalModel, s: SeededStream, count: int, workers: int = 1
) -> np.ndarray:
    """Ancestral draws from the marginal: hyperparameters, then ``x`` given them."""
    _check_supported(m.features)
    return np.concatenate(
        _run_blocks(lambda bi, rows: _hierarchical_block(m, s, bi, rows), count, workers)
    )


def _uniform_block(base: BoxPrior, s: SeededStream, bi: int, rows: int) -> np.ndarray:
    u = s.generator(bi, _POINTS).random((rows, base.dimension))
    return base.lo + u * (base.hi - base.lo)


def implied_statistic_values(
    source: HierarchicalModel | BoxPrior | CanonicalDistribution,
    f: Statistic | Callable[[np.ndarray], np.ndarray],
    s: SeededStream,
    count: int,
    workers: int = 1,
) -> np.ndarray:
    """Values of ``f`` on ``count`` draws from ``source``, without keeping the draws."""
    if isinstance(source, HierarchicalModel):
        _check_supported(source.features)
        draw = lambda bi, rows: _hierarchical_block(source, s, bi, rows)  # noqa: E731
    elif isinstance(source, BoxPrior):
        draw = lambda bi, rows: _uniform_block(source, s, bi, rows)  # noqa: E731
    elif isinstance(source, CanonicalDistribution):
        _check_supported(source.features)
        a, b = source.coordinate_exponent()

        def draw(bi, rows):
            u = s.generator(bi, _POINTS).random((rows, source.base.dimension))
            return _draw_points(u, a, b, source.base.lo, source.base.hi)
    else:
        raise TypeError(f"cannot sample from {type(source).__name__}")
    parts = _run_blocks(lambda bi, rows: np.asarray(f(draw(bi, rows)), dtype=float), count, workers)
    return np.concatenate(parts, axis=0)


# --------------------------------------------------------------------------
# histograms


def default_bins(count: int) -> int:
    return int(min(math.ceil(math.sqrt(count)), 200))


@dataclass(frozen=True, eq=False)
class HistogramSummary:
    edges: np.ndarray
    counts: np.ndarray
    total: int

    @classmethod
    def from_values(cls, values, bins: int, value_range=None) -> "HistogramSummary":
        values = np.asarray(values, dtype=float)
        if values.size < bins:
            raise ValueError("need at least as many samples as bins")
        lo, hi = (float(values.min()), float(values.max())) if value_range is None else value_range
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
        return cls(edges, counts.astype(np.int64), int(counts.sum()))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def densities(self) -> np.ndarray:
        return self.counts / (self.total * self.widths)

    def rows(self) -> list[tuple[float, float, int, float]]:
        return [
            (float(lo), float(hi), int(c), float(d))
            for lo, hi, c, d in zip(self.edges[:-1], self.edges[1:], self.counts, self.densities)
        ]

    def to_dict(self) -> dict:
        return {
            "edges": [float(e) for e in self.edges],
            "counts": [int(c) for c in self.counts],
            "total": self.total,
            "densities": [float(d) for d in self.densities],
        }


@dataclass(frozen=True, eq=False)
class Histogram2DSummary:
    edges1: np.ndarray
    edges2: np.ndarray
    counts: np.ndarray
    total: int

    @classmethod
    def from_values(cls, v1, v2, bins: int) -> "Histogram2DSummary":
        counts, e1, e2 = np.histogram2d(v1, v2, bins=bins)
        return cls(e1, e2, counts.astype(np.int64), int(counts.sum()))

    @property
    def densities(self) -> np.ndarray:
        area = np.outer(np.diff(self.edges1), np.diff(self.edges2))
        return self.counts / (self.total * area)

    def rows(self):
        dens = self.densities
        out = []
        for i in range(self.counts.shape[0]):
            for j in range(self.counts.shape[1]):
                out.append(
                    (
                        float(self.edges1[i]),
                        float(self.edges1[i + 1]),
                        int(self.counts[i, j]),
                        float(dens[i, j]),
                        float(self.edges2[j]),
                        float(self.edges2[j + 1]),
                    )
                )
        return out

    def to_dict(self) -> dict:
        return {
            "edges1": [float(e) for e in self.edges1],
            "edges2": [float(e) for e in self.edges2],
            "counts": self.counts.astype(int).tolist(),
            "total": self.total,
        }


_TRANSFORMS = ("identity", "log")


def apply_transform(values: np.ndarray, transform: str) -> np.ndarray:
    if transform == "identity":
        return values
    if transform == "log":
        if np.any(values <= 0):
            raise ValueError("log transform of a nonpositive statistic value")
        return np.log(values)
    raise ValueError(f"unknown transform {transform!r}; expected one of {_TRANSFORMS}")


def implied_statistic_histogram(
    source: HierarchicalModel | BoxPrior,
    f: Statistic,
    transform: str,
    s: SeededStream,
    count: int,
    bins: int | None = None,
    workers: int = 1,
) -> HistogramSummary:
    """Histogram of ``transform(f(x))`` under ``source``, equal-width over the sample range."""
    bins = default_bins(count) if bins is None else bins
    if count < bins:
        raise ValueError("count must be at least the number of bins")
    values = apply_transform(implied_statistic_values(source, f, s, count, workers), transform)
    return HistogramSummary.from_values(values, bins)


# --------------------------------------------------------------------------
# Kolmogorov-Smirnov distance


@dataclass(frozen=True)
class ReferenceCdf:
    """``uniform(a, b)`` or ``normal(mean, sd)``."""

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind == "uniform" and not self.a < self.b:
            raise ValueError("uniform reference needs a < b")
        if self.kind == "normal" and not self.b > 0:
            raise ValueError("normal reference needs a positive sd")
        if self.kind not in ("uniform", "normal"):
            raise ValueError(f"unknown reference CDF {self.kind!r}")

    @classmethod
    def uniform(cls, a: float, b: float) -> "ReferenceCdf":
        return cls("uniform", a, b)

    @classmethod
    def normal(cls, mean: float, sd: float) -> "ReferenceCdf":
        return cls("normal", mean, sd)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            return np.clip((x - self.a) / (self.b - self.a), 0.0, 1.0)
        return special.ndtr((x - self.a) / self.b)


def ks_statistic(samples, reference: ReferenceCdf) -> float:
    """Sup distance between the empirical CDF of ``samples`` and ``reference``."""
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    n = x.size
    if n == 0:
        raise ValueError("samples must be nonempty")
    cdf = reference(x)
    above = np.arange(1, n + 1) / n - cdf
    below = cdf - np.arange(n) / n
    return float(max(above.max(), below.max()))
