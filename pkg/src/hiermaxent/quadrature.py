"""Log-space quadrature for batches of one-dimensional integrals.

Integrands are supplied as log values so that factors like ``mu**-100``
never underflow.  Each integral in a batch keeps its own running maximum
of the log integrand and accumulates ``exp(log f - max)``; the shift is
updated whenever refinement finds a larger value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

LogIntegrand = Callable[[np.ndarray, np.ndarray], np.ndarray]

ADAPTIVE_SIMPSON = "adaptive-simpson"
TENSOR_GRID = "tensor-grid"


class QuadratureError(RuntimeError):
    """Refinement hit the depth limit before meeting the tolerance."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature settings.

    ``rule`` is ``adaptive-simpson`` (any dimension up to 2, nested) or
    ``tensor-grid`` (Gauss-Legendre panels refined by doubling, 2-D
    hyperparameter spaces only).
    """

    rule: str = ADAPTIVE_SIMPSON
    rel_tol: float = 1e-8
    max_depth: int = 50

    def __post_init__(self):
        if self.rule not in (ADAPTIVE_SIMPSON, TENSOR_GRID):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")


def _initial_edges(lo: float, hi: float, breaks, panels: int) -> np.ndarray:
    edges = np.linspace(lo, hi, panels + 1)
    if breaks is not None and len(breaks):
        b = np.asarray(breaks, dtype=float)
        b = b[(b > lo) & (b < hi) & np.isfinite(b)]
        edges = np.unique(np.concatenate([edges, b]))
    return edges


class _ShiftedSum:
    """Per-integral sums (and error sums) stored as ``value * exp(shift)``."""

    def __init__(self, size: int):
        self.value = np.zeros(size)
        self.error = np.zeros(size)
        self.shift = np.full(size, -np.inf)

    def raise_shift(self, new_shift: np.ndarray) -> None:
        grow = new_shift > self.shift
        if np.any(grow):
            finite = grow & np.isfinite(self.shift)
            factor = np.exp(self.shift[finite] - new_shift[finite])
            self.value[finite] *= factor
            self.error[finite] *= factor
            self.shift[grow] = new_shift[grow]

    def scaled(self, logv: np.ndarray, ids: np.ndarray) -> np.ndarray:
        sh = self.shift[ids]
        out = np.zeros(logv.shape)
        ok = np.isfinite(sh) & np.isfinite(logv)
        out[ok] = np.exp(logv[ok] - sh[ok])
        return out

    def log(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.value > 0, np.log(self.value) + self.shift, -np.inf)


def _group_max(values: np.ndarray, ids: np.ndarray, size: int) -> np.ndarray:
    out = np.full(size, -np.inf)
    np.maximum.at(out, ids, values)
    return out


def log_adaptive_simpson(
    logf: LogIntegrand,
    lo,
    hi,
    rel_tol: float,
    max_depth: int,
    breaks: Sequence | None = None,
    panels: int = 16,
    noise: float = 0.0,
    max_panels: int = 200_000,
) -> np.ndarray:
    """Log of ``integral_lo^hi exp(logf(t))`` for a batch of integrals.

    ``logf(t, ids)`` returns log integrand values at points ``t`` belonging
    to integrals ``ids``.  ``lo``, ``hi`` are arrays with one entry per
    integral; ``breaks`` optionally lists extra panel edges per integral
    (used to put nodes on sharp peaks).  Panels are refined breadth-first;
    one is accepted when the Richardson error estimate is within its
    width-proportional share of ``rel_tol`` times the current total, or
    below ``noise`` times its own value (for integrands that are themselves
    quadrature results with relative error ``noise``), or below the rounding
    floor implied by the magnitude of the log values.  An integral stops
    as soon as its accepted plus pending error estimates sum to at most
    ``rel_tol`` times its total.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    size = lo.size
    left, right, owner = [], [], []
    for i in range(size):
        e = _initial_edges(lo[i], hi[i], None if breaks is None else breaks[i], panels)
        left.append(e[:-1])
        right.append(e[1:])
        owner.append(np.full(e.size - 1, i))
    left = np.concatenate(left)
    right = np.concatenate(right)
    owner = np.concatenate(owner)
    mid = 0.5 * (left + right)

    # evaluate edges and midpoints in one call
    pts = np.concatenate([left, mid, right])
    ids = np.concatenate([owner, owner, owner])
    vals = np.asarray(logf(pts, ids), dtype=float)
    k = left.size
    f_l, f_m, f_r = vals[:k], vals[k : 2 * k], vals[2 * k :]

    acc = _ShiftedSum(size)
    span = hi - lo
    for _ in range(max_depth):
        m = 0.5 * (left + right)
        lm = 0.5 * (left + m)
        rm = 0.5 * (m + right)
        new = np.asarray(logf(np.concatenate([lm, rm]), np.concatenate([owner, owner])), dtype=float)
        k = left.size
        f_lm, f_rm = new[:k], new[k:]

        peak = _group_max(np.concatenate([f_l, f_m, f_r, f_lm, f_rm]), np.tile(owner, 5), size)
        acc.raise_shift(peak)
        el, em, er = acc.scaled(f_l, owner), acc.scaled(f_m, owner), acc.scaled(f_r, owner)
        elm, erm = acc.scaled(f_lm, owner), acc.scaled(f_rm, owner)
        h = right - left
        whole = h / 6.0 * (el + 4.0 * em + er)
        halves = h / 12.0 * (el + 4.0 * elm + 2.0 * em + 4.0 * erm + er)
        err = np.abs(halves - whole) / 15.0

        pending = np.bincount(owner, weights=halves, minlength=size)
        total = acc.value + pending
        # an integral whose summed error estimates already meet the tolerance is finished
        finished = acc.error + np.bincount(owner, weights=err, minlength=size) <= rel_tol * total
        budget = rel_tol * total[owner] * h / span[owner]
        tiny = h <= 8.0 * np.finfo(float).eps * np.maximum(np.abs(left), np.abs(right))
        # rounding in a log value of size L makes exp() uncertain by about eps * L
        logmag = np.max(np.abs(np.nan_to_num(np.stack([f_l, f_m, f_r, f_lm, f_rm]), posinf=0.0, neginf=0.0)), axis=0)
        floor = np.maximum(noise, 64.0 * np.finfo(float).eps * logmag) * np.abs(halves)
        done = (err <= budget) | (err <= floor) | tiny | finished[owner]
        acc.value += np.bincount(
            owner[done], weights=(halves + (halves - whole) / 15.0)[done], minlength=size
        )
        acc.error += np.bincount(owner[done], weights=err[done], minlength=size)
        keep = ~done
        if not np.any(keep):
            return acc.log()
        if 2 * np.count_nonzero(keep) > max_panels:
            raise QuadratureError(f"adaptive Simpson needs more than {max_panels} panels")
        left, right, owner = left[keep], right[keep], owner[keep]
        m, f_l, f_m, f_r = m[keep], f_l[keep], f_m[keep], f_r[keep]
        f_lm, f_rm = f_lm[keep], f_rm[keep]
        left = np.concatenate([left, m])
        right = np.concatenate([m, right])
        owner = np.concatenate([owner, owner])
        f_l, f_m, f_r = (
            np.concatenate([f_l, f_m]),
            np.concatenate([f_lm, f_rm]),
            np.concatenate([f_m, f_r]),
        )
    raise QuadratureError(
        f"adaptive Simpson did not converge within depth {max_depth} "
        f"({left.size} panels still active)"
    )


def log_gauss_legendre(
    logf: LogIntegrand,
    lo,
    hi,
    rel_tol: float,
    max_depth: int,
    breaks: Sequence | None = None,
    panels: int = 16,
    order: int = 10,
) -> np.ndarray:
    """Composite Gauss-Legendre, doubling the panels until successive results agree."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    size = lo.size
    nodes, weights = np.polynomial.legendre.leggauss(order)
    base_edges = [
        _initial_edges(lo[i], hi[i], None if breaks is None else breaks[i], panels)
        for i in range(size)
    ]

    def estimate(split: int) -> np.ndarray:
        pts, wts, ids = [], [], []
        for i, e in enumerate(base_edges):
            fine = (e[:-1, None] + np.diff(e)[:, None] * np.arange(split + 1)[None, :] / split)
            fine = np.unique(fine.reshape(-1))
            a, b = fine[:-1], fine[1:]
            half = 0.5 * (b - a)
            centre = 0.5 * (a + b)
            pts.append((centre[:, None] + half[:, None] * nodes[None, :]).reshape(-1))
            wts.append((half[:, None] * weights[None, :]).reshape(-1))
            ids.append(np.full(pts[-1].size, i))
        pts, wts, ids = np.concatenate(pts), np.concatenate(wts), np.concatenate(ids)
        vals = np.asarray(logf(pts, ids), dtype=float)
        shift = _group_max(vals, ids, size)
        safe = np.where(np.isfinite(shift), shift, 0.0)
        with np.errstate(invalid="ignore"):
            terms = np.where(np.isfinite(vals), wts * np.exp(vals - safe[ids]), 0.0)
        s = np.bincount(ids, weights=terms, minlength=size)
        with np.errstate(divide="ignore"):
            return np.where(s > 0, np.log(s) + safe, -np.inf)

    prev = estimate(1)
    split = 1
    for _ in range(max_depth):
        split *= 2
        cur = estimate(split)
        both = np.isfinite(cur) & np.isfinite(prev)
        change = np.where(both, np.abs(np.expm1(cur - prev)), 0.0)
        if np.all(change <= rel_tol) and np.array_equal(np.isfinite(cur), np.isfinite(prev)):
            return cur
        prev = cur
    raise QuadratureError(f"tensor grid did not converge within {max_depth} doublings")


def _legendre_panels(edges: np.ndarray, split: int, nodes, weights):
    fine = edges[:-1, None] + np.diff(edges)[:, None] * np.arange(split + 1)[None, :] / split
    fine = np.unique(fine.reshape(-1))
    a, b = fine[:-1], fine[1:]
    half = 0.5 * (b - a)
    pts = (0.5 * (a + b))[:, None] + half[:, None] * nodes[None, :]
    return pts.reshape(-1), (half[:, None] * weights[None, :]).reshape(-1)


def log_gauss_legendre_2d(
    logf: Callable[[np.ndarray, np.ndarray], np.ndarray],
    outer: tuple[float, float],
    inner: tuple[float, float],
    rel_tol: float,
    max_depth: int,
    outer_breaks=None,
    inner_breaks: Callable[[np.ndarray], np.ndarray] | None = None,
    panels: int = 16,
    order: int = 10,
    max_points: int = 8_000_000,
) -> float:
    """Product Gauss-Legendre rule over a rectangle, doubling both axes together.

    ``logf(u, v)`` takes matching arrays of outer and inner coordinates.
    ``inner_breaks(u)`` may return a ``(len(u), k)`` array of extra inner
    edges for each outer node.  Stops when the total changes by at most
    ``rel_tol`` between doublings.
    """
    nodes, weights = np.polynomial.legendre.leggauss(order)
    out_edges = _initial_edges(outer[0], outer[1], outer_breaks, panels)
    base_inner = np.linspace(inner[0], inner[1], panels + 1)

    def estimate(split: int) -> float:
        u, wu = _legendre_panels(out_edges, split, nodes, weights)
        extra = None if inner_breaks is None else np.asarray(inner_breaks(u))
        terms = []
        for i in range(u.size):
            e = base_inner
            if extra is not None:
                b = extra[i]
                e = np.unique(np.concatenate([e, b[(b > inner[0]) & (b < inner[1])]]))
            v, wv = _legendre_panels(e, split, nodes, weights)
            terms.append((np.full(v.size, u[i]), v, wu[i] * wv))
        uu = np.concatenate([t[0] for t in terms])
        if uu.size > max_points:
            raise QuadratureError(f"tensor grid needs more than {max_points} points")
        vv = np.concatenate([t[1] for t in terms])
        ww = np.concatenate([t[2] for t in terms])
        vals = np.asarray(logf(uu, vv), dtype=float)
        top = np.max(vals)
        if not np.isfinite(top):
            return -np.inf
        return float(np.log(math.fsum(ww * np.exp(vals - top))) + top)

    prev = estimate(1)
    split = 1
    for _ in range(max_depth):
        split *= 2
        cur = estimate(split)
        if abs(np.expm1(cur - prev)) <= rel_tol or (cur == prev == -np.inf):
            return cur
        prev = cur
    raise QuadratureError(f"tensor grid did not converge within {max_depth} doublings")


def log_integrate(
    logf: LogIntegrand, lo, hi, spec: QuadratureSpec, breaks=None, panels: int = 16, noise: float = 0.0
):
    if spec.rule == TENSOR_GRID:
        return log_gauss_legendre(logf, lo, hi, spec.rel_tol, min(spec.max_depth, 12), breaks, panels)
    return log_adaptive_simpson(logf, lo, hi, spec.rel_tol, spec.max_depth, breaks, panels, noise)
