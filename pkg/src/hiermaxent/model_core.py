"""Domain types and exact density/statistic evaluation.

Everything here is immutable and pure.  Vector arguments ``x`` may be a
single point (1-D array) or a stack of points (2-D array, one per row)
wherever noted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from hiermaxent import _onedim

MEAN = "mean"
SUM = "sum"
SUM_OF_SQUARES = "sum_of_squares"
TABULATED = "tabulated"
INDICATOR = "indicator"

_SEPARABLE = (MEAN, SUM, SUM_OF_SQUARES)


class UnsupportedModelError(ValueError):
    """The requested computation has no backend for this model."""


# --------------------------------------------------------------------------
# base prior


@dataclass(frozen=True)
class BoxPrior:
    """Uniform density on an axis-aligned box ``prod_i [lower_i, upper_i]``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) == 0 or len(lower) != len(upper):
            raise ValueError("lower and upper must be nonempty and of equal length")
        for i, (lo, hi) in enumerate(zip(lower, upper)):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"invalid bounds for coordinate {i}: [{lo}, {hi}]")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def cube(cls, dimension: int, lower: float, upper: float) -> "BoxPrior":
        if dimension < 1:
            raise ValueError("dimension must be positive")
        return cls((lower,) * dimension, (upper,) * dimension)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def log_volume(self) -> float:
        return math.fsum(math.log(h - l) for l, h in zip(self.lower, self.upper))

    def contains(self, x) -> np.ndarray | bool:
        x = np.asarray(x, dtype=float)
        inside = np.all((x >= self.lo) & (x <= self.hi), axis=-1)
        return bool(inside) if inside.ndim == 0 else inside

    def log_density(self, x) -> np.ndarray | float:
        inside = np.asarray(self.contains(x))
        out = np.where(inside, -self.log_volume, -np.inf)
        return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class Statistic:
    """A derived quantity ``T = f(x)``.

    ``kind`` is one of ``mean``, ``sum``, ``sum_of_squares``, ``tabulated``
    or ``indicator``.  A tabulated statistic carries a finite table keyed by
    state tuples.  An indicator statistic wraps another statistic and returns
    1.0 when its value falls in ``[lo, hi)`` (``[lo, hi]`` when
    ``closed_right``), else 0.0.
    """

    kind: str
    table: Mapping[tuple, float] | None = field(default=None, compare=False, hash=False)
    inner: "Statistic | None" = None
    lo: float | None = None
    hi: float | None = None
    closed_right: bool = False

    def __post_init__(self):
        if self.kind not in (*_SEPARABLE, TABULATED, INDICATOR):
            raise ValueError(f"unknown statistic kind {self.kind!r}")
        if self.kind == TABULATED:
            if not self.table:
                raise ValueError("tabulated statistic needs a nonempty table")
            frozen = {tuple(float(v) for v in k): float(t) for k, t in self.table.items()}
            object.__setattr__(self, "table", MappingProxyType(frozen))
        if self.kind == INDICATOR and (self.inner is None or self.lo is None or self.hi is None):
            raise ValueError("indicator statistic needs inner, lo and hi")

    @classmethod
    def mean(cls) -> "Statistic":
        return cls(MEAN)

    @classmethod
    def sum(cls) -> "Statistic":
        return cls(SUM)

    @classmethod
    def sum_of_squares(cls) -> "Statistic":
        return cls(SUM_OF_SQUARES)

    @classmethod
    def tabulated(cls, table: Mapping[Sequence[float], float]) -> "Statistic":
        return cls(TABULATED, table={tuple(k): v for k, v in table.items()})

    @property
    def separable(self) -> bool:
        return self.kind in _SEPARABLE

    @property
    def permutation_invariant(self) -> bool:
        return self.kind in _SEPARABLE or (
            self.kind == INDICATOR and self.inner.permutation_invariant
        )

    def __call__(self, x) -> np.ndarray | float:
        """Vectorised evaluation; rows of a 2-D ``x`` are separate points."""
        x = np.asarray(x, dtype=float)
        if self.kind == MEAN:
            return np.mean(x, axis=-1)
        if self.kind == SUM:
            return np.sum(x, axis=-1)
        if self.kind == SUM_OF_SQUARES:
            return np.sum(x * x, axis=-1)
        if self.kind == TABULATED:
            if x.ndim == 1:
                return self._lookup(x)
            return np.array([self._lookup(row) for row in x])
        t = np.asarray(self.inner(x))
        upper_ok = t <= self.hi if self.closed_right else t < self.hi
        out = ((t >= self.lo) & upper_ok).astype(float)
        return float(out) if out.ndim == 0 else out

    def _lookup(self, x) -> float:
        key = tuple(float(v) for v in x)
        try:
            return self.table[key]
        except KeyError:
            raise KeyError(f"state {key} is not declared in the tabulated statistic") from None


def statistic_eval(f: Statistic, x, dimension: int | None = None) -> float:
    """Evaluate ``f`` at a single point with correctly rounded sums.

    ``math.fsum`` makes the result independent of summation order, so a
    permuted ``x`` gives a bit-identical value.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("statistic_eval takes a single point")
    if dimension is not None and x.size != dimension:
        raise ValueError(f"expected a point of dimension {dimension}, got {x.size}")
    if f.kind == MEAN:
        return math.fsum(x) / x.size
    if f.kind == SUM:
        return math.fsum(x)
    if f.kind == SUM_OF_SQUARES:
        return math.fsum(x * x)
    if f.kind == TABULATED:
        return f._lookup(x)
    t = statistic_eval(f.inner, x)
    upper_ok = t <= f.hi if f.closed_right else t < f.hi
    return 1.0 if (t >= f.lo and upper_ok) else 0.0


# --------------------------------------------------------------------------
# canonical distributions


@dataclass(frozen=True, eq=False)
class CanonicalDistribution:
    """``pi(x) exp(sum_i multipliers[i] * features[i](x)) / Z`` on a box."""

    base: BoxPrior
    features: tuple[Statistic, ...]
    multipliers: np.ndarray

    def __post_init__(self):
        feats = tuple(self.features)
        lam = np.array(self.multipliers, dtype=float).reshape(-1)
        if len(feats) != lam.size:
            raise ValueError("one multiplier per feature is required")
        if not np.all(np.isfinite(lam)):
            raise ValueError("multipliers must be finite")
        lam.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "multipliers", lam)

    @property
    def separable(self) -> bool:
        return all(f.separable for f in self.features)

    def coordinate_exponent(self) -> tuple[float, float]:
        """Per-coordinate ``(a, b)`` with exponent ``sum_i (a x_i + b x_i^2)``."""
        return coordinate_exponents(self.features, self.multipliers, self.base.dimension)

    def with_multipliers(self, multipliers) -> "CanonicalDistribution":
        return CanonicalDistribution(self.base, self.features, multipliers)


def coordinate_exponents(features, multipliers, dimension: int):
    """Map feature multipliers to per-coordinate linear/quadratic coefficients.

    ``multipliers`` may be 1-D (one distribution) or 2-D (one row per
    distribution).  Raises :class:`UnsupportedModelError` for features that
    do not separate across coordinates.
    """
    lam = np.asarray(multipliers, dtype=float)
    a = np.zeros(lam.shape[:-1])
    b = np.zeros(lam.shape[:-1])
    for i, f in enumerate(features):
        li = lam[..., i]
        if f.kind == MEAN:
            a = a + li / dimension
        elif f.kind == SUM:
            a = a + li
        elif f.kind == SUM_OF_SQUARES:
            b = b + li
        else:
            raise UnsupportedModelError(f"feature {f.kind!r} does not separate over coordinates")
    if a.ndim == 0:
        return float(a), float(b)
    return a, b


def log_density_unnormalized(d: CanonicalDistribution, x) -> np.ndarray | float:
    """``log pi(x) + sum_i lam_i f_i(x)``; ``-inf`` outside the box."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d.base.dimension:
        raise ValueError(f"expected points of dimension {d.base.dimension}")
    log_pi = np.asarray(d.base.log_density(x), dtype=float)
    inside = np.isfinite(log_pi)
    tilt = np.zeros(log_pi.shape)
    for lam, f in zip(d.multipliers, d.features):
        if lam != 0.0:
            if x.ndim == 1:
                tilt = tilt + lam * statistic_eval(f, x)
            else:
                tilt = tilt + lam * np.asarray(f(x))
    out = np.where(inside, log_pi + tilt, -np.inf)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# links from traditional hyperparameters to multipliers


def link_gaussian(mu, sigma):
    """Multipliers ``(lam_sum, lam_sumsq)`` for an iid Normal(mu, sigma^2) tilt.

    Expanding ``-(x - mu)^2 / (2 sigma^2)`` gives ``mu/sigma^2`` on ``x`` and
    ``-1/(2 sigma^2)`` on ``x^2``.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise ValueError("sigma must be positive")
    var = sigma * sigma
    lam1 = mu / var
    lam2 = -0.5 / var
    if lam1.ndim == 0:
        return float(lam1), float(lam2)
    return lam1, lam2


def unlink_gaussian(lam1, lam2):
    """Inverse of :func:`link_gaussian`."""
    lam1 = np.asarray(lam1, dtype=float)
    lam2 = np.asarray(lam2, dtype=float)
    if np.any(~(lam2 < 0)):
        raise ValueError("the quadratic multiplier must be negative")
    var = -0.5 / lam2
    mu = lam1 * var
    sigma = np.sqrt(var)
    if mu.ndim == 0:
        return float(mu), float(sigma)
    return mu, sigma


def link_exponential(mu, hi):
    """Per-coordinate multiplier ``lam`` whose tilt of Uniform(0, hi) has mean ``mu``.

    Solves ``E[x] = mu`` for density ``exp(lam * x)`` on ``[0, hi]`` by a
    bracketed Newton iteration.  ``lam`` is negative for ``mu < hi/2`` and
    approaches ``-1/mu`` when ``mu << hi``.  Broadcasts over arrays.
    """
    mu = np.asarray(mu, dtype=float)
    hi = np.asarray(hi, dtype=float)
    mu, hi = np.broadcast_arrays(mu, hi)
    if np.any(~(hi > 0)) or np.any(~(mu > 0)) or np.any(mu > 0.5 * hi):
        raise ValueError("link_exponential needs 0 < mu <= hi/2")

    # g(theta) = mean(theta) - mu is decreasing, g(0) >= 0 and g(1/mu) <= 0
    left = np.zeros(mu.shape)
    right = 1.0 / mu
    theta = right.copy()
    for _ in range(200):
        g = _onedim.trunc_exp_mean(theta, hi) - mu
        left = np.where(g > 0, theta, left)
        right = np.where(g <= 0, theta, right)
        slope = -_onedim.trunc_exp_var(theta, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(slope < 0, g / slope, np.nan)
        proposal = theta - step
        ok = np.isfinite(proposal) & (proposal > left) & (proposal < right)
        new = np.where(ok, proposal, 0.5 * (left + right))
        done = np.abs(new - theta) <= 4.0 * np.finfo(float).eps * np.maximum(theta, 1e-300)
        theta = new
        if np.all(done | (right - left <= 4.0 * np.finfo(float).eps * right)):
            break
    theta = np.where(mu == 0.5 * hi, 0.0, theta)
    lam = -theta
    return float(lam) if lam.ndim == 0 else lam


# --------------------------------------------------------------------------
# hyperpriors


@dataclass(frozen=True)
class UniformInterval:
    """Hyperparameter uniform on ``[lo, hi]``."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo <= self.hi):
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    # quadrature runs in the coordinate in which the law is uniform
    @property
    def coord_bounds(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def from_coord(self, u):
        return u

    def to_coord(self, v):
        return v


@dataclass(frozen=True)
class LogUniform:
    """Hyperparameter whose natural log is uniform on ``[log_lo, log_hi]``."""

    log_lo: float
    log_hi: float

    def __post_init__(self):
        if not (
            math.isfinite(self.log_lo) and math.isfinite(self.log_hi) and self.log_lo <= self.log_hi
        ):
            raise ValueError(f"empty interval [{self.log_lo}, {self.log_hi}]")

    @property
    def coord_bounds(self) -> tuple[float, float]:
        return (self.log_lo, self.log_hi)

    def from_coord(self, u):
        return np.exp(u)

    def to_coord(self, v):
        return np.log(v)


@dataclass(frozen=True)
class HyperPrior:
    """Product of independent one-dimensional hyperparameter laws."""

    components: tuple[UniformInterval | LogUniform, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a hyperprior needs at least one component")
        object.__setattr__(self, "components", comps)

    @property
    def dimension(self) -> int:
        return len(self.components)

    @property
    def is_point(self) -> bool:
        return all(c.coord_bounds[0] == c.coord_bounds[1] for c in self.components)


# --------------------------------------------------------------------------
# hierarchical models

EXPONENTIAL_IID = "TruncatedExponentialIID"
GAUSSIAN_IID = "GaussianIID"
GENERIC = "GenericCanonical"

LINK_EXPONENTIAL_MEAN = "exponential-mean"
LINK_GAUSSIAN_MEAN_SD = "gaussian-mean-sd"
LINK_MULTIPLIERS = "multipliers"


@dataclass(frozen=True)
class HierarchicalModel:
    """Hyperprior plus a named link from hyperparameters to a canonical distribution.

    Links:

    ``exponential-mean``
        one hyperparameter ``mu``; conditional is iid on ``[0, hi]`` with the
        single feature ``Mean`` and per-coordinate mean ``mu``.
    ``gaussian-mean-sd``
        hyperparameters ``(mu, sigma)``; features ``(Sum, SumOfSquares)``
        with multipliers from :func:`link_gaussian`.
    ``multipliers``
        the hyperparameters are the multipliers of ``features`` directly.
    """

    base: BoxPrior
    hyperprior: HyperPrior
    link: str
    family: str
    features: tuple[Statistic, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if self.link == LINK_EXPONENTIAL_MEAN:
            if self.hyperprior.dimension != 1 or [f.kind for f in self.features] != [MEAN]:
                raise ValueError("exponential-mean link needs one hyperparameter and feature Mean")
            if any(v != 0.0 for v in self.base.lower) or len(set(self.base.upper)) != 1:
                raise ValueError("exponential-mean link needs a box [0, hi]^n")
        elif self.link == LINK_GAUSSIAN_MEAN_SD:
            if self.hyperprior.dimension != 2 or [f.kind for f in self.features] != [
                SUM,
                SUM_OF_SQUARES,
            ]:
                raise ValueError("gaussian-mean-sd link needs (mu, sigma) and features (Sum, SumOfSquares)")
        elif self.link == LINK_MULTIPLIERS:
            if self.hyperprior.dimension != len(self.features):
                raise ValueError("multipliers link needs one hyperparameter per feature")
        else:
            raise ValueError(f"unknown link {self.link!r}")
        if self.family not in (EXPONENTIAL_IID, GAUSSIAN_IID, GENERIC):
            raise ValueError(f"unknown conditional family {self.family!r}")

    @property
    def dimension(self) -> int:
        return self.base.dimension

    def multipliers(self, hyper) -> np.ndarray:
        """Multipliers for hyperparameter values; ``hyper`` is ``(k,)`` or ``(count, k)``."""
        h = np.asarray(hyper, dtype=float)
        if self.link == LINK_EXPONENTIAL_MEAN:
            lam = self.dimension * np.asarray(link_exponential(h[..., 0], self.base.upper[0]))
            return lam[..., None]
        if self.link == LINK_GAUSSIAN_MEAN_SD:
            lam1, lam2 = link_gaussian(h[..., 0], h[..., 1])
            return np.stack([np.asarray(lam1), np.asarray(lam2)], axis=-1)
        return h.copy()

    def conditional(self, hyper) -> CanonicalDistribution:
        """The canonical distribution ``p(x | hyper)``."""
        return CanonicalDistribution(self.base, self.features, self.multipliers(hyper))


def exponential_model(
    dimension: int = 100, upper: float = 1e4, log_mu: tuple[float, float] = (-5.0, 5.0)
) -> HierarchicalModel:
    """Iid exponentials with mean ``mu`` on ``[0, upper]^n``, ``log mu`` uniform."""
    return HierarchicalModel(
        base=BoxPrior.cube(dimension, 0.0, upper),
        hyperprior=HyperPrior((LogUniform(*log_mu),)),
        link=LINK_EXPONENTIAL_MEAN,
        family=EXPONENTIAL_IID,
        features=(Statistic.mean(),),
    )


def gaussian_model(
    dimension: int = 100,
    bound: float = 100.0,
    mu: tuple[float, float] = (-100.0, 100.0),
    log_sigma: tuple[float, float] = (-5.0, 5.0),
) -> HierarchicalModel:
    """Iid normals truncated to ``[-bound, bound]^n`` with uniform ``mu`` and log-uniform ``sigma``."""
    return HierarchicalModel(
        base=BoxPrior.cube(dimension, -bound, bound),
        hyperprior=HyperPrior((UniformInterval(*mu), LogUniform(*log_sigma))),
        link=LINK_GAUSSIAN_MEAN_SD,
        family=GAUSSIAN_IID,
        features=(Statistic.sum(), Statistic.sum_of_squares()),
    )


# --------------------------------------------------------------------------
# discrete distributions


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Probability table over a finite ordered list of states."""

    states: tuple
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        states = tuple(self.states)
        if len(states) != p.size:
            raise ValueError("one probability per state is required")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and nonnegative")
        if abs(math.fsum(p) - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {math.fsum(p)!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_weights(cls, states, weights) -> "DiscreteDistribution":
        w = np.asarray(weights, dtype=float)
        total = math.fsum(w)
        if not total > 0:
            raise ValueError("weights have zero total mass")
        p = w / total
        # one renormalisation absorbs the rounding of the division
        return cls(states, p / math.fsum(p))

    @classmethod
    def uniform(cls, states) -> "DiscreteDistribution":
        states = tuple(states)
        return cls.from_weights(states, np.ones(len(states)))

    def total_variation(self, other: "DiscreteDistribution") -> float:
        if self.states != other.states:
            raise ValueError("distributions are over different state lists")
        return 0.5 * math.fsum(np.abs(self.probs - other.probs))
