"""Constraints on the full distribution of a statistic over a finite state space.

Fixing ``P(T in bin_b) = t_b`` for every bin is the same as fixing the
expectation of each bin indicator.  The maximum-entropy solution is then
``p_k ∝ pi_k exp(lam_{bin(k)})``: a reweighting of the prior by a
nonnegative function of the bin alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hiermaxent.model_core import INDICATOR, DiscreteDistribution, Statistic, statistic_eval
from hiermaxent.moment_solver import InfeasibleConstraintError, solve_discrete_moments

_MARGINAL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class BinConstraintSet:
    """Target probabilities for the bins of a statistic.

    Bins come either from sorted ``edges`` (``[e_k, e_{k+1})``, the last bin
    closed) or from an explicit list of attainable ``values`` for a discrete
    statistic (one bin per value).
    """

    statistic: Statistic
    target_probs: tuple[float, ...]
    edges: tuple[float, ...] | None = None
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        if (self.edges is None) == (self.values is None):
            raise ValueError("give exactly one of edges or values")
        t = np.array(self.target_probs, dtype=float)
        if np.any(t < 0) or abs(math.fsum(t) - 1.0) > 1e-12:
            raise ValueError("target probabilities must be nonnegative and sum to 1")
        if self.edges is not None:
            edges = tuple(float(e) for e in self.edges)
            _check_edges(edges)
            nbins = len(edges) - 1
            object.__setattr__(self, "edges", edges)
        else:
            values = tuple(float(v) for v in self.values)
            if len(set(values)) != len(values) or not values:
                raise ValueError("bin values must be distinct and nonempty")
            nbins = len(values)
            object.__setattr__(self, "values", values)
        if t.size != nbins:
            raise ValueError(f"{nbins} bins but {t.size} target probabilities")
        object.__setattr__(self, "target_probs", tuple(t.tolist()))

    @property
    def n_bins(self) -> int:
        return len(self.target_probs)

    def assign(self, t) -> np.ndarray:
        """Bin index of each statistic value; raises if any value is uncovered."""
        t = np.asarray(t, dtype=float)
        if self.values is not None:
            vals = np.array(self.values)
            hit = t[:, None] == vals[None, :]
            idx = np.argmax(hit, axis=1)
            covered = hit.any(axis=1)
        else:
            edges = np.array(self.edges)
            idx = np.searchsorted(edges, t, side="right") - 1
            idx = np.where(t == edges[-1], len(edges) - 2, idx)
            covered = (t >= edges[0]) & (t <= edges[-1])
        if not np.all(covered):
            bad = t[~covered][0]
            raise ValueError(f"statistic value {bad} falls outside every bin")
        return idx


def _check_edges(edges: Sequence[float]) -> None:
    if len(edges) < 2:
        raise ValueError("at least two bin edges are required")
    if any(not (b > a) for a, b in zip(edges[:-1], edges[1:])):
        raise ValueError("bin edges must be strictly increasing")


@dataclass(frozen=True, eq=False)
class WeightedDiscreteModel:
    """A finite grid of states with prior weights and precomputed statistic values."""

    states: tuple
    base_prior: DiscreteDistribution
    statistic_values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.statistic_values, dtype=float).reshape(-1)
        if vals.size != len(self.states) or self.base_prior.states != tuple(self.states):
            raise ValueError("states, prior and statistic values must align")
        vals.setflags(write=False)
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "statistic_values", vals)

    @classmethod
    def from_statistic(cls, states, statistic: Statistic, prior=None) -> "WeightedDiscreteModel":
        states = tuple(tuple(s) if np.ndim(s) else (s,) for s in states)
        base = (
            DiscreteDistribution.uniform(states)
            if prior is None
            else DiscreteDistribution.from_weights(states, prior)
        )
        values = [statistic_eval(statistic, np.array(s, dtype=float)) for s in states]
        return cls(states, base, np.array(values))


def bin_indicator_features(s: Statistic, edges: Sequence[float]) -> list[Statistic]:
    """One indicator statistic per bin ``[e_k, e_{k+1})``, the last bin closed."""
    edges = [float(e) for e in edges]
    _check_edges(edges)
    last = len(edges) - 2
    return [
        Statistic(INDICATOR, inner=s, lo=lo, hi=hi, closed_right=(k == last))
        for k, (lo, hi) in enumerate(zip(edges[:-1], edges[1:]))
    ]


def _prior_bin_mass(m: WeightedDiscreteModel, bins: np.ndarray, n_bins: int) -> np.ndarray:
    return np.array(
        [math.fsum(m.base_prior.probs[bins == b]) for b in range(n_bins)]
    )


def prior_bin_probabilities(m: WeightedDiscreteModel, c: BinConstraintSet) -> np.ndarray:
    """Prior mass of each bin of ``c``; ``c.target_probs`` is ignored."""
    bins = c.assign(m.statistic_values)
    return _prior_bin_mass(m, bins, c.n_bins)


def bin_marginals(d: DiscreteDistribution, m: WeightedDiscreteModel, c: BinConstraintSet) -> np.ndarray:
    """``P(T in bin_b)`` under ``d`` by direct summation."""
    bins = c.assign(m.statistic_values)
    return np.array([math.fsum(d.probs[bins == b]) for b in range(c.n_bins)])


def solve_bin_multipliers(
    m: WeightedDiscreteModel, c: BinConstraintSet, tol: float = _MARGINAL_TOL
) -> np.ndarray:
    """Multiplier per bin so that ``p_k ∝ pi_k exp(lam_bin(k))`` hits the targets.

    Indicators partition the states, so ``exp(lam_b) = t_b / M_b`` with
    ``M_b`` the prior mass of bin ``b``.  The gauge fixes the last bin with
    positive target at 0; bins with zero target get ``-inf``.  The result is
    checked by summing the reweighted distribution.
    """
    bins = c.assign(m.statistic_values)
    mass = _prior_bin_mass(m, bins, c.n_bins)
    t = np.array(c.target_probs)
    starved = (t > 0) & (mass <= 0)
    if np.any(starved):
        raise InfeasibleConstraintError(
            f"bins {np.flatnonzero(starved).tolist()} have positive target but no prior mass"
        )
    active = t > 0
    lam = np.full(c.n_bins, -np.inf)
    lam[active] = np.log(t[active]) - np.log(mass[active])
    gauge = np.flatnonzero(active)[-1]
    lam[active] -= lam[gauge]

    achieved = bin_marginals(reweight(m, np.exp(lam), c), m, c)
    gap = np.max(np.abs(achieved - t))
    if gap > tol:
        raise InfeasibleConstraintError(f"reweighted marginals miss targets by {gap:.3e}")
    return lam


def solve_bin_multipliers_iterative(
    m: WeightedDiscreteModel, c: BinConstraintSet, tol: float = 1e-13
) -> np.ndarray:
    """Same multipliers as :func:`solve_bin_multipliers`, by Newton on the dual.

    Cross-check path only.  Bins with zero target are excluded from the state
    space; the gauge bin's indicator is dropped to remove the degeneracy.
    """
    bins = c.assign(m.statistic_values)
    t = np.array(c.target_probs)
    active = np.flatnonzero(t > 0)
    keep = np.isin(bins, active)
    gauge = active[-1]
    free = active[:-1]
    F = (bins[keep][None, :] == free[:, None]).astype(float)
    prior = m.base_prior.probs[keep]
    if F.shape[0] == 0:
        lam = np.full(c.n_bins, -np.inf)
        lam[gauge] = 0.0
        return lam
    lam_free, _, _ = solve_discrete_moments(prior / math.fsum(prior), F, t[free], tol=tol)
    lam = np.full(c.n_bins, -np.inf)
    lam[free] = lam_free
    lam[gauge] = 0.0
    return lam


def reweight(m: WeightedDiscreteModel, g, c: BinConstraintSet) -> DiscreteDistribution:
    """Normalised ``pi_k * g[bin(k)]`` for a nonnegative per-bin weight ``g``."""
    g = np.asarray(g, dtype=float)
    if g.size != c.n_bins:
        raise ValueError("one weight per bin is required")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValueError("bin weights must be finite and nonnegative")
    bins = c.assign(m.statistic_values)
    w = m.base_prior.probs * g[bins]
    if not math.fsum(w) > 0:
        raise ValueError("reweighting leaves zero total mass")
    return DiscreteDistribution.from_weights(m.states, w)


def brute_force_maxent(m: WeightedDiscreteModel, c: BinConstraintSet) -> DiscreteDistribution:
    """Relative-entropy projection of the prior onto the bin constraints.

    Within each bin the prior's shape is kept and its total rescaled to the
    target.  Written independently of the multiplier route as an oracle.
    """
    v = m.statistic_values
    prior = m.base_prior.probs
    p = np.zeros(len(m.states))
    covered = np.zeros(len(m.states), dtype=bool)
    for b, target in enumerate(c.target_probs):
        members = _bin_mask(c, b, v)
        covered |= members
        mass = math.fsum(prior[members])
        if target > 0 and not mass > 0:
            raise InfeasibleConstraintError(f"bin {b} has positive target but no prior mass")
        if target > 0:
            p[members] = prior[members] * (target / mass)
    if not np.all(covered):
        raise ValueError("some states fall outside every bin")
    return DiscreteDistribution(m.states, p / math.fsum(p))


def _bin_mask(c: BinConstraintSet, b: int, v: np.ndarray) -> np.ndarray:
    if c.values is not None:
        return v == c.values[b]
    lo, hi = c.edges[b], c.edges[b + 1]
    if b == c.n_bins - 1:
        return (v >= lo) & (v <= hi)
    return (v >= lo) & (v < hi)


def entropy(d: DiscreteDistribution, reference: DiscreteDistribution) -> float:
    """``-sum_k p_k log(p_k / pi_k)`` with ``0 log 0 = 0``."""
    if d.states != reference.states:
        raise ValueError("distributions are over different state lists")
    p, q = d.probs, reference.probs
    used = p > 0
    if np.any(used & (q <= 0)):
        raise ValueError("distribution puts mass where the reference has none")
    return -math.fsum(p[used] * (np.log(p[used]) - np.log(q[used])))


def perturbed_feasible(
    p,
    constraint_matrix,
    rng: np.random.Generator,
    count: int,
    support=None,
    scale: float = 0.5,
) -> list[np.ndarray]:
    """Random distributions sharing ``constraint_matrix @ p`` with ``p``.

    Each draw adds a random direction projected onto the null space of the
    constraint rows (plus the all-ones row), restricted to ``support``, and
    scaled so every entry stays nonnegative.
    """
    p = np.asarray(p, dtype=float)
    A = np.atleast_2d(np.asarray(constraint_matrix, dtype=float))
    support = (p > 0) if support is None else np.asarray(support, dtype=bool)
    idx = np.flatnonzero(support)
    As = np.vstack([A[:, idx], np.ones(idx.size)])
    # orthonormal basis of the row space; SVD, since rows that vanish on the support make QR rank-deficient
    _, sing, vt = np.linalg.svd(As, full_matrices=False)
    q = vt[sing > 1e-10 * sing[0]].T
    out = []
    for _ in range(count):
        z = rng.standard_normal(idx.size)
        delta = z - q @ (q.T @ z)
        norm = np.max(np.abs(delta))
        if norm == 0:
            out.append(p.copy())
            continue
        neg = delta < 0
        limit = np.min(p[idx][neg] / -delta[neg]) if np.any(neg) else np.inf
        step = scale * rng.uniform(0.1, 1.0) * min(limit, 1.0 / norm)
        qd = p.copy()
        qd[idx] += step * delta
        out.append(np.clip(qd, 0.0, None))
    return out


def bin_matrix(m: WeightedDiscreteModel, c: BinConstraintSet) -> np.ndarray:
    """Indicator matrix with one row per bin and one column per state."""
    bins = c.assign(m.statistic_values)
    return (bins[None, :] == np.arange(c.n_bins)[:, None]).astype(float)
