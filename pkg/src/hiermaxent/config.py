"""JSON model configuration.

A config describes a base box, an optional hierarchical model over it,
the statistics to report, and optional moment or bin constraints::

    {
      "schema": 1,
      "name": "exponential",
      "dimension": 100,
      "base": {"lower": 0.0, "upper": 100.0},
      "hierarchical": {
        "family": "TruncatedExponentialIID",
        "box": {"lower": 0.0, "upper": 10000.0},
        "hyperprior": [{"name": "mu", "kind": "log-uniform", "lower": -5.0, "upper": 5.0}]
      },
      "statistics": [{"name": "mean", "transform": "log"}],
      "moments": {"features": ["mean"], "targets": [5.0]},
      "quadrature": {"rule": "adaptive-simpson", "rel_tol": 1e-6, "max_depth": 50},
      "samples": 100000,
      "seed": 1
    }

Errors carry the field path and, where it can be located, the line.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Any

from hiermaxent.indicator import BinConstraintSet, WeightedDiscreteModel, prior_bin_probabilities
from hiermaxent.model_core import (
    EXPONENTIAL_IID,
    GAUSSIAN_IID,
    GENERIC,
    LINK_EXPONENTIAL_MEAN,
    LINK_GAUSSIAN_MEAN_SD,
    LINK_MULTIPLIERS,
    BoxPrior,
    HierarchicalModel,
    HyperPrior,
    LogUniform,
    Statistic,
    UniformInterval,
)
from hiermaxent.moment_solver import MomentConstraintSet
from hiermaxent.quadrature import QuadratureSpec

SCHEMA_VERSION = 1

_FAMILY_LINKS = {
    EXPONENTIAL_IID: LINK_EXPONENTIAL_MEAN,
    GAUSSIAN_IID: LINK_GAUSSIAN_MEAN_SD,
    GENERIC: LINK_MULTIPLIERS,
}
_STATISTICS = {
    "mean": Statistic.mean,
    "sum": Statistic.sum,
    "sum_of_squares": Statistic.sum_of_squares,
}


class ConfigError(ValueError):
    """A config that cannot be parsed into model types."""

    def __init__(self, message: str, path: str = "", line: int | None = None):
        self.path = path
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if path:
            where.append(f"field {path}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class StatisticSpec:
    name: str
    statistic: Statistic
    transform: str


@dataclass(frozen=True)
class ModelConfig:
    raw: dict
    name: str
    base: BoxPrior
    model: HierarchicalModel | None
    statistics: tuple[StatisticSpec, ...]
    moments: MomentConstraintSet | None
    discrete: tuple[WeightedDiscreteModel, BinConstraintSet] | None
    quadrature: QuadratureSpec
    samples: int | None
    seed: int | None
    bins: int | None


class _Reader:
    """Typed field access that reports failures with a path and line."""

    def __init__(self, text: str):
        self.text = text

    def line_of(self, path: list) -> int | None:
        pos = 0
        for key in path:
            if isinstance(key, str):
                found = self.text.find(f'"{key}"', pos)
                if found < 0:
                    break
                pos = found
        return self.text.count("\n", 0, pos) + 1 if path else None

    def fail(self, path: list, message: str):
        text = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in path).lstrip(".")
        raise ConfigError(message, text, self.line_of(path))

    def get(self, obj: dict, path: list, key: str, kind, default: Any = ...):
        if not isinstance(obj, dict):
            self.fail(path, "expected an object")
        if key not in obj:
            if default is ...:
                self.fail(path + [key], "missing required field")
            return default
        return self.check(obj[key], path + [key], kind)

    def check(self, value, path: list, kind):
        if kind is float:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            if ok and not math.isfinite(value):
                self.fail(path, "must be finite")
            value = float(value) if ok else value
        elif kind is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        else:
            ok = isinstance(value, kind)
        if not ok:
            name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
            self.fail(path, f"expected {name}, got {type(value).__name__}")
        return value


def _box(r: _Reader, obj, path, dimension: int) -> BoxPrior:
    lo = r.get(obj, path, "lower", float)
    hi = r.get(obj, path, "upper", float)
    if not hi > lo:
        r.fail(path + ["upper"], "upper must exceed lower")
    return BoxPrior.cube(dimension, lo, hi)


def _hyper_component(r: _Reader, obj, path):
    kind = r.get(obj, path, "kind", str)
    lo = r.get(obj, path, "lower", float)
    hi = r.get(obj, path, "upper", float)
    if not hi >= lo:
        r.fail(path + ["upper"], "upper must not be below lower")
    if kind == "uniform":
        return UniformInterval(lo, hi)
    if kind == "log-uniform":
        return LogUniform(lo, hi)
    r.fail(path + ["kind"], f"unknown hyperprior kind {kind!r}; expected uniform or log-uniform")


def _statistic(r: _Reader, name: str, path) -> Statistic:
    if name not in _STATISTICS:
        r.fail(path, f"unknown statistic {name!r}; expected one of {sorted(_STATISTICS)}")
    return _STATISTICS[name]()


def _hierarchical(r: _Reader, obj, path, base: BoxPrior, dimension: int) -> HierarchicalModel:
    family = r.get(obj, path, "family", str)
    if family not in _FAMILY_LINKS:
        r.fail(path + ["family"], f"unknown family {family!r}; expected one of {sorted(_FAMILY_LINKS)}")
    box = base
    if "box" in obj:
        box = _box(r, r.get(obj, path, "box", dict), path + ["box"], dimension)
    comps = r.get(obj, path, "hyperprior", list)
    hyper = HyperPrior(
        tuple(_hyper_component(r, c, path + ["hyperprior", i]) for i, c in enumerate(comps))
    )
    if family == EXPONENTIAL_IID:
        features = (Statistic.mean(),)
    elif family == GAUSSIAN_IID:
        features = (Statistic.sum(), Statistic.sum_of_squares())
    else:
        names = r.get(obj, path, "features", list)
        features = tuple(
            _statistic(r, r.check(n, path + ["features", i], str), path + ["features", i])
            for i, n in enumerate(names)
        )
    try:
        return HierarchicalModel(box, hyper, _FAMILY_LINKS[family], family, features)
    except ValueError as exc:
        r.fail(path, str(exc))


def _moments(r: _Reader, obj, path) -> MomentConstraintSet:
    names = r.get(obj, path, "features", list)
    targets = r.get(obj, path, "targets", list)
    feats = tuple(
        _statistic(r, r.check(n, path + ["features", i], str), path + ["features", i])
        for i, n in enumerate(names)
    )
    vals = tuple(r.check(t, path + ["targets", i], float) for i, t in enumerate(targets))
    if len(feats) != len(vals) or not feats:
        r.fail(path + ["targets"], "one target per feature is required")
    return MomentConstraintSet(feats, vals)


def _discrete(r: _Reader, obj, path):
    """A product grid ``values**dimension`` with bins on a statistic of the state."""
    values = [r.check(v, path + ["values", i], float) for i, v in enumerate(r.get(obj, path, "values", list))]
    if not values:
        r.fail(path + ["values"], "at least one value is required")
    dim = r.get(obj, path, "dimension", int)
    if dim < 1:
        r.fail(path + ["dimension"], "must be positive")
    if len(values) ** dim > 10**6:
        r.fail(path + ["dimension"], "state space larger than 10^6")
    stat = _statistic(r, r.get(obj, path, "statistic", str), path + ["statistic"])
    states = list(itertools.product(values, repeat=dim))
    prior = obj.get("prior")
    if prior is not None:
        prior = [r.check(p, path + ["prior", i], float) for i, p in enumerate(r.get(obj, path, "prior", list))]
        if len(prior) != len(states):
            r.fail(path + ["prior"], f"expected {len(states)} weights")
    try:
        m = WeightedDiscreteModel.from_statistic(states, stat, prior)
    except ValueError as exc:
        r.fail(path + ["prior"], str(exc))
    edges = [r.check(e, path + ["edges", i], float) for i, e in enumerate(r.get(obj, path, "edges", list))]
    targets = obj.get("targets", "prior")
    if targets == "prior":
        k = len(edges) - 1
        try:
            probe = BinConstraintSet(stat, (1.0 / k,) * k, edges=tuple(edges))
            mass = prior_bin_probabilities(m, probe)
        except ValueError as exc:
            r.fail(path + ["edges"], str(exc))
        targets = (mass / math.fsum(mass)).tolist()
    else:
        targets = [r.check(t, path + ["targets", i], float) for i, t in enumerate(r.check(targets, path + ["targets"], list))]
    try:
        c = BinConstraintSet(stat, tuple(targets), edges=tuple(edges))
        c.assign(m.statistic_values)
    except ValueError as exc:
        r.fail(path + ["edges"], str(exc))
    return m, c


def parse_config(text: str) -> ModelConfig:
    """Parse config text into model types; raises :class:`ConfigError`."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, "", exc.lineno) from None
    r = _Reader(text)
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object", "", 1)
    schema = r.get(raw, [], "schema", int)
    if schema != SCHEMA_VERSION:
        r.fail(["schema"], f"unsupported schema version {schema}; expected {SCHEMA_VERSION}")
    name = r.get(raw, [], "name", str, "model")
    dimension = r.get(raw, [], "dimension", int)
    if dimension < 1:
        r.fail(["dimension"], "must be positive")
    base = _box(r, r.get(raw, [], "base", dict), ["base"], dimension)

    model = None
    if "hierarchical" in raw:
        model = _hierarchical(r, r.get(raw, [], "hierarchical", dict), ["hierarchical"], base, dimension)

    stats = []
    for i, s in enumerate(r.get(raw, [], "statistics", list, [])):
        sname = r.get(s, ["statistics", i], "name", str)
        transform = r.get(s, ["statistics", i], "transform", str, "identity")
        if transform not in ("identity", "log"):
            r.fail(["statistics", i, "transform"], f"unknown transform {transform!r}")
        stats.append(StatisticSpec(sname, _statistic(r, sname, ["statistics", i, "name"]), transform))

    moments = _moments(r, raw["moments"], ["moments"]) if "moments" in raw else None
    discrete = _discrete(r, raw["discrete"], ["discrete"]) if "discrete" in raw else None

    q = r.get(raw, [], "quadrature", dict, {})
    try:
        quad = QuadratureSpec(
            rule=r.get(q, ["quadrature"], "rule", str, "adaptive-simpson"),
            rel_tol=r.get(q, ["quadrature"], "rel_tol", float, 1e-6),
            max_depth=r.get(q, ["quadrature"], "max_depth", int, 50),
        )
    except ValueError as exc:
        r.fail(["quadrature"], str(exc))

    samples = r.get(raw, [], "samples", int, None)
    seed = r.get(raw, [], "seed", int, None)
    bins = r.get(raw, [], "bins", (int, type(None)), None)
    if samples is not None and samples < 1:
        r.fail(["samples"], "must be positive")
    if seed is not None and not 0 <= seed < 2**64:
        r.fail(["seed"], "must be an unsigned 64-bit integer")
    if bins is not None and bins < 1:
        r.fail(["bins"], "must be positive")
    return ModelConfig(
        raw, name, base, model, tuple(stats), moments, discrete, quad, samples, seed, bins
    )


def load_config(path) -> ModelConfig:
    """Read and parse a config file; ``OSError`` propagates for I/O failures."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text)
