"""Lagrange multipliers for expected-value constraints.

The multipliers minimise the convex dual ``D(lam) = log Z(lam) - lam . c``,
whose gradient is ``<f> - c`` and whose Hessian is the feature covariance.
Separable features on a box reduce ``log Z`` to a sum of one-dimensional
normalisers, available in closed form for truncated exponentials and
truncated normals and by adaptive quadrature otherwise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from hiermaxent import _onedim
from hiermaxent.model_core import (
    MEAN,
    SUM,
    SUM_OF_SQUARES,
    BoxPrior,
    CanonicalDistribution,
    Statistic,
    UnsupportedModelError,
    coordinate_exponents,
)

logger = logging.getLogger(__name__)

BACKEND_EXPONENTIAL = "truncated-exponential"
BACKEND_GAUSSIAN = "truncated-gaussian"
BACKEND_QUADRATURE = "quadrature"


class InfeasibleConstraintError(ValueError):
    """A target lies outside the attainable range of its feature."""


class ConvergenceError(RuntimeError):
    """The solver stopped before reaching the requested tolerance."""


def truncated_exp_mean(theta: float, hi: float) -> float:
    """Mean of the density proportional to ``exp(-theta x)`` on ``[0, hi]``.

    Equals ``1/theta - hi/(exp(theta hi) - 1)``; a series replaces the
    closed form when ``theta*hi`` is small enough for it to cancel.
    """
    return float(_onedim.trunc_exp_mean(theta, hi))


# --------------------------------------------------------------------------
# partition function


def backend_for(d: CanonicalDistribution) -> str:
    a, b = d.coordinate_exponent()
    if b == 0.0:
        return BACKEND_EXPONENTIAL
    if b < 0.0:
        return BACKEND_GAUSSIAN
    return BACKEND_QUADRATURE


def _require_separable(d: CanonicalDistribution):
    if not d.separable:
        kinds = sorted({f.kind for f in d.features if not f.separable})
        raise UnsupportedModelError(
            f"no partition-function backend for non-separable features {kinds}"
        )


def log_partition(d: CanonicalDistribution) -> float:
    """``log Z(lam) = log integral pi(x) exp(sum_i lam_i f_i(x)) dx``.

    ``pi`` is normalised, so all-zero multipliers give 0.
    """
    _require_separable(d)
    a, b = d.coordinate_exponent()
    lo, hi = d.base.lo, d.base.hi
    if b <= 0.0:
        return math.fsum(np.atleast_1d(_onedim.log_norm(a, b, lo, hi)))
    # coordinates with equal bounds share one integral
    cache: dict[tuple[float, float], float] = {}
    total = []
    for l, h in zip(d.base.lower, d.base.upper):
        if (l, h) not in cache:
            cache[(l, h)] = _onedim.log_norm_quad(a, b, l, h)
        total.append(cache[(l, h)])
    return math.fsum(total)


def _feature_expectations(features, dimension: int, m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    out = np.empty(len(features))
    for i, f in enumerate(features):
        if f.kind == MEAN:
            out[i] = math.fsum(m1) / dimension
        elif f.kind == SUM:
            out[i] = math.fsum(m1)
        elif f.kind == SUM_OF_SQUARES:
            out[i] = math.fsum(m2)
        else:  # pragma: no cover - guarded by _require_separable
            raise UnsupportedModelError(f.kind)
    return out


def _fd_step(lam: np.ndarray) -> np.ndarray:
    return 1e-6 * np.maximum(1.0, np.abs(lam))


def expected_statistics(d: CanonicalDistribution) -> np.ndarray:
    """``<f_i>`` under ``d``, the gradient of :func:`log_partition`.

    Analytic for the closed-form backends; one-dimensional quadrature of
    the first two moments otherwise.
    """
    _require_separable(d)
    a, b = d.coordinate_exponent()
    if b <= 0.0:
        m1, m2 = _onedim.moments(a, b, d.base.lo, d.base.hi)
        return _feature_expectations(d.features, d.base.dimension, np.atleast_1d(m1), np.atleast_1d(m2))
    cache: dict[tuple[float, float], tuple[float, float]] = {}
    m1, m2 = np.empty(d.base.dimension), np.empty(d.base.dimension)
    for i, (l, h) in enumerate(zip(d.base.lower, d.base.upper)):
        if (l, h) not in cache:
            cache[(l, h)] = _onedim.moments_quad(a, b, l, h)
        m1[i], m2[i] = cache[(l, h)]
    return _feature_expectations(d.features, d.base.dimension, m1, m2)


def _fd_hessian(d: CanonicalDistribution) -> np.ndarray:
    lam = d.multipliers
    h = _fd_step(lam)
    m = lam.size
    hess = np.empty((m, m))
    for i in range(m):
        e = np.zeros(m)
        e[i] = h[i]
        up = expected_statistics(d.with_multipliers(lam + e))
        down = expected_statistics(d.with_multipliers(lam - e))
        hess[:, i] = (up - down) / (2.0 * h[i])
    return 0.5 * (hess + hess.T)


# --------------------------------------------------------------------------
# damped Newton on a convex objective


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    gradient: np.ndarray
    iterations: int
    history: list[float] = field(default_factory=list)


def newton_minimize(
    fun: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    hess: Callable[[np.ndarray], np.ndarray],
    x0,
    tol: float,
    max_iter: int,
    armijo: float = 1e-4,
    shrink: float = 0.5,
) -> NewtonResult:
    """Minimise a smooth convex function by Newton steps with backtracking.

    Stops when ``max|grad| <= tol``.  Every accepted step satisfies the
    Armijo condition, so the recorded objective values never increase.
    """
    x = np.array(x0, dtype=float)
    fx = fun(x)
    g = grad(x)
    history = [fx]
    for it in range(max_iter + 1):
        if np.max(np.abs(g)) <= tol:
            return NewtonResult(x, fx, g, it, history)
        if it == max_iter:
            break
        H = hess(x)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -g
        slope = float(g @ step)
        if not np.all(np.isfinite(step)) or slope >= 0:
            # Hessian lost positive definiteness numerically; fall back to steepest descent
            step = -g / max(np.max(np.abs(np.diag(H))), 1.0)
            slope = float(g @ step)
        t = 1.0
        for _ in range(80):
            x_new = x + t * step
            f_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= fx + armijo * t * slope:
                break
            t *= shrink
        else:
            raise ConvergenceError(
                f"line search failed at iteration {it} with gradient norm {np.max(np.abs(g)):.3e}"
            )
        x, fx = x_new, f_new
        g = grad(x)
        history.append(fx)
        logger.debug("newton iter %d: f=%.17g |g|=%.3e t=%g", it, fx, np.max(np.abs(g)), t)
    raise ConvergenceError(
        f"no convergence in {max_iter} iterations (gradient norm {np.max(np.abs(g)):.3e})"
    )


# --------------------------------------------------------------------------
# moment constraints


@dataclass(frozen=True)
class MomentConstraintSet:
    """Targets ``c`` for ``<f_i> = c_i``."""

    features: tuple[Statistic, ...]
    targets: tuple[float, ...]

    def __post_init__(self):
        feats = tuple(self.features)
        targets = tuple(float(t) for t in self.targets)
        if len(feats) != len(targets) or not feats:
            raise ValueError("one target per feature is required")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "targets", targets)


@dataclass(frozen=True)
class SolveReport:
    multipliers: tuple[float, ...]
    log_partition: float
    achieved_moments: tuple[float, ...]
    iterations: int
    dual_gradient_norm: float
    targets: tuple[float, ...] = ()
    dual_history: tuple[float, ...] = ()
    backend: str = ""

    def to_dict(self) -> dict:
        return {
            "multipliers": list(self.multipliers),
            "log_partition": self.log_partition,
            "achieved_moments": list(self.achieved_moments),
            "targets": list(self.targets),
            "iterations": self.iterations,
            "dual_gradient_norm": self.dual_gradient_norm,
            "dual_history": list(self.dual_history),
            "backend": self.backend,
        }


def feature_range(f: Statistic, base: BoxPrior) -> tuple[float, float]:
    """Attainable ``[min, max]`` of a separable feature on the box."""
    lo, hi = base.lo, base.hi
    if f.kind == SUM:
        return math.fsum(lo), math.fsum(hi)
    if f.kind == MEAN:
        return math.fsum(lo) / base.dimension, math.fsum(hi) / base.dimension
    if f.kind == SUM_OF_SQUARES:
        nearest = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(lo * lo, hi * hi))
        return math.fsum(nearest), math.fsum(np.maximum(lo * lo, hi * hi))
    raise UnsupportedModelError(f"no attainable range for feature {f.kind!r}")


def check_feasible(base: BoxPrior, constraints: MomentConstraintSet) -> None:
    kinds = [f.kind for f in constraints.features]
    if len(set(kinds)) != len(kinds) or {MEAN, SUM} <= set(kinds):
        raise ValueError(f"linearly dependent feature set {kinds}")
    for f, c in zip(constraints.features, constraints.targets):
        lo, hi = feature_range(f, base)
        if not lo < c < hi:
            raise InfeasibleConstraintError(
                f"target {c} for {f.kind} is outside the open attainable range ({lo}, {hi})"
            )
    targets = dict(zip(kinds, constraints.targets))
    if SUM_OF_SQUARES in targets and (SUM in targets or MEAN in targets):
        n = base.dimension
        total = targets[SUM] if SUM in targets else n * targets[MEAN]
        # Cauchy-Schwarz: sum x^2 >= (sum x)^2 / n, strictly for a nondegenerate law
        if not targets[SUM_OF_SQUARES] > total * total / n:
            raise InfeasibleConstraintError(
                "sum-of-squares target is not above (sum target)^2 / n"
            )


def solve_multipliers(
    base: BoxPrior,
    constraints: MomentConstraintSet,
    tol: float = 1e-9,
    max_iter: int = 200,
) -> SolveReport:
    """Find ``lam`` with ``<f_i> = c_i`` under ``pi(x) exp(lam . f(x)) / Z``.

    Starts at ``lam = 0`` (the base prior) and runs damped Newton on the
    dual.  Raises :class:`InfeasibleConstraintError` for unattainable targets
    and :class:`ConvergenceError` when ``max_iter`` is exhausted.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    check_feasible(base, constraints)
    c = np.array(constraints.targets)
    template = CanonicalDistribution(base, constraints.features, np.zeros(c.size))

    def dual(lam):
        return log_partition(template.with_multipliers(lam)) - float(lam @ c)

    def grad(lam):
        return expected_statistics(template.with_multipliers(lam)) - c

    def hess(lam):
        return _fd_hessian(template.with_multipliers(lam))

    res = newton_minimize(dual, grad, hess, np.zeros(c.size), tol, max_iter)
    d = template.with_multipliers(res.x)
    achieved = expected_statistics(d)
    return SolveReport(
        multipliers=tuple(float(v) for v in res.x),
        log_partition=float(log_partition(d)),
        achieved_moments=tuple(float(v) for v in achieved),
        iterations=res.iterations,
        dual_gradient_norm=float(np.max(np.abs(achieved - c))),
        targets=tuple(float(v) for v in c),
        dual_history=tuple(res.history),
        backend=backend_for(d),
    )


# --------------------------------------------------------------------------
# finite state spaces


def solve_discrete_moments(
    prior: Sequence[float],
    feature_matrix,
    targets,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> tuple[np.ndarray, np.ndarray, SolveReport]:
    """Canonical distribution on a finite grid: ``p_k ∝ prior_k exp(lam . F[:, k])``.

    ``feature_matrix`` has one row per feature and one column per state.
    Returns ``(lam, p, report)``.  Linearly dependent feature rows make the
    dual singular; fix a gauge before calling.
    """
    prior = np.asarray(prior, dtype=float)
    F = np.atleast_2d(np.asarray(feature_matrix, dtype=float))
    c = np.asarray(targets, dtype=float)
    support = prior > 0
    log_prior = np.where(support, np.log(np.where(support, prior, 1.0)), -np.inf)

    def weights(lam):
        s = log_prior + lam @ F
        shift = np.max(s[support])
        w = np.exp(s - shift)
        return w, shift

    def dual(lam):
        w, shift = weights(lam)
        return shift + math.log(math.fsum(w)) - float(lam @ c)

    def probs(lam):
        w, _ = weights(lam)
        return w / math.fsum(w)

    def grad(lam):
        return F @ probs(lam) - c

    def hess(lam):
        p = probs(lam)
        mean = F @ p
        centred = F - mean[:, None]
        return (centred * p) @ centred.T

    res = newton_minimize(dual, grad, hess, np.zeros(c.size), tol, max_iter)
    p = probs(res.x)
    achieved = F @ p
    report = SolveReport(
        multipliers=tuple(float(v) for v in res.x),
        log_partition=float(dual(res.x) + res.x @ c),
        achieved_moments=tuple(float(v) for v in achieved),
        iterations=res.iterations,
        dual_gradient_norm=float(np.max(np.abs(achieved - c))),
        targets=tuple(float(v) for v in c),
        dual_history=tuple(res.history),
        backend="discrete",
    )
    return res.x, p, report
