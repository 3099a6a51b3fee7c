"""Command-line front end.

Subcommands::

    hiermaxent exponential-example [--samples N] [--seed S] [--out DIR]
    hiermaxent gaussian-example    [--samples N] [--seed S] [--out DIR]
    hiermaxent solve CONFIG (--moments | --bins) [--tol T]
    hiermaxent verify CONFIG [--pairs K] [--reltol R]

Exit codes: 0 success, 1 solve or verification failure, 2 infeasible or
unsupported model, 3 config or argument parse error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from hiermaxent.config import SCHEMA_VERSION, ConfigError, ModelConfig, load_config, parse_config
from hiermaxent.indicator import bin_marginals, prior_bin_probabilities, reweight, solve_bin_multipliers
from hiermaxent.model_core import Statistic, UnsupportedModelError, coordinate_exponents
from hiermaxent.moment_solver import ConvergenceError, InfeasibleConstraintError, solve_multipliers
from hiermaxent.quadrature import QuadratureError, QuadratureSpec
from hiermaxent.sampler import (
    Histogram2DSummary,
    HistogramSummary,
    ReferenceCdf,
    SeededStream,
    apply_transform,
    default_bins,
    implied_statistic_values,
    ks_statistic,
    sample_hierarchical,
)
from hiermaxent import svg
from hiermaxent.verification import run_sufficiency

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INFEASIBLE = 2
EXIT_PARSE = 3
EXIT_IO = 4

DEFAULT_SAMPLES = 100_000
DEFAULT_SEED = 1

# fixed stream indices under the single CLI seed
STREAM_UNIFORM = 0
STREAM_HIERARCHICAL = 1
STREAM_VERIFY = 2

_BLUE = "#1f77b4"
_ORANGE = "#ff7f0e"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse would exit with status 2, which is reserved for infeasible models
    def error(self, message):
        raise _UsageError(message)


# --------------------------------------------------------------------------
# output helpers


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _finite_or_none(v: float):
    return float(v) if math.isfinite(v) else None


def _histogram_text(h, fmt: str) -> str:
    if fmt == "json":
        return _dump_json(h.to_dict())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if isinstance(h, Histogram2DSummary):
        w.writerow(["bin_lo", "bin_hi", "count", "density", "bin2_lo", "bin2_hi"])
    else:
        w.writerow(["bin_lo", "bin_hi", "count", "density"])
    for row in h.rows():
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _packaged_config(name: str) -> ModelConfig:
    text = resources.files("hiermaxent").joinpath("configs", name).read_text(encoding="utf-8")
    return parse_config(text)


def _settings(args, cfg: ModelConfig | None):
    samples = args.samples if args.samples is not None else (cfg.samples if cfg and cfg.samples else DEFAULT_SAMPLES)
    seed = args.seed if args.seed is not None else (cfg.seed if cfg and cfg.seed is not None else DEFAULT_SEED)
    if samples < 1:
        raise _UsageError("--samples must be positive")
    if not 0 <= seed < 2**64:
        raise _UsageError("--seed must be an unsigned 64-bit integer")
    bins = args.bins if args.bins is not None else (cfg.bins if cfg else None)
    if bins is not None and bins < 1:
        raise _UsageError("--bins must be positive")
    return samples, seed, bins


def _summary(values: np.ndarray) -> dict:
    return {"mean": float(np.mean(values)), "sd": float(np.std(values, ddof=1))}


# --------------------------------------------------------------------------
# subcommands


def cmd_exponential_example(args) -> int:
    cfg = _packaged_config("exponential.json") if args.config is None else load_config(args.config)
    if cfg.model is None or not cfg.statistics:
        raise ConfigError("the example needs a hierarchical model and a statistic", "hierarchical")
    samples, seed, bins = _settings(args, cfg)
    bins = default_bins(samples) if bins is None else bins
    spec = cfg.statistics[0]
    lo_log, hi_log = cfg.model.hyperprior.components[0].coord_bounds

    t_uniform = implied_statistic_values(
        cfg.base, spec.statistic, SeededStream(seed, STREAM_UNIFORM), samples, args.workers
    )
    t_hier = implied_statistic_values(
        cfg.model, spec.statistic, SeededStream(seed, STREAM_HIERARCHICAL), samples, args.workers
    )
    v_uniform = apply_transform(t_uniform, spec.transform)
    v_hier = apply_transform(t_hier, spec.transform)
    h_uniform = HistogramSummary.from_values(v_uniform, bins)
    h_hier = HistogramSummary.from_values(v_hier, bins)

    n = cfg.base.dimension
    half_width = 0.5 * (cfg.base.hi[0] - cfg.base.lo[0])
    centre = float(cfg.base.lo[0]) + half_width
    clt_sd = 2.0 * half_width / math.sqrt(12.0 * n)
    ks = ks_statistic(v_hier, ReferenceCdf.uniform(lo_log, hi_log))
    uniform_t = _summary(t_uniform)
    uniform_v = _summary(v_uniform)
    checks = {
        "clt_mean_within_0.03": bool(abs(uniform_t["mean"] - centre) <= 0.03),
        "clt_sd_within_3pct": bool(abs(uniform_t["sd"] / clt_sd - 1.0) <= 0.03),
        "hierarchical_ks_le_0.05": bool(ks <= 0.05),
        "uniform_transformed_sd_le_0.07": bool(uniform_v["sd"] <= 0.07),
    }
    ext = "csv" if args.format == "csv" else "json"
    files = {
        "uniform_histogram": f"exponential_uniform_hist.{ext}",
        "hierarchical_histogram": f"exponential_hierarchical_hist.{ext}",
    }
    out = Path(args.out)
    _write(out, files["uniform_histogram"], _histogram_text(h_uniform, args.format))
    _write(out, files["hierarchical_histogram"], _histogram_text(h_hier, args.format))
    report = {
        "schema": SCHEMA_VERSION,
        "command": "exponential-example",
        "config": cfg.raw,
        "seed": seed,
        "samples": samples,
        "bins": bins,
        "statistic": {"name": spec.name, "transform": spec.transform},
        "uniform": {"statistic": uniform_t, "transformed": uniform_v, "clt_reference": {"mean": centre, "sd": clt_sd}},
        "hierarchical": {
            "transformed": _summary(v_hier),
            "ks_uniform": ks,
            "ks_reference": [lo_log, hi_log],
        },
        "checks": checks,
        "passed": all(checks.values()),
        "files": files,
    }
    if args.svg:
        text, axes = svg.histogram_overlay(
            [
                ("uniform prior", h_uniform.edges, h_uniform.densities, _ORANGE),
                ("hierarchical prior", h_hier.edges, h_hier.densities, _BLUE),
            ],
            title=f"{spec.transform}({spec.name}) under two priors",
            xlabel=f"{spec.transform}({spec.name})",
        )
        files["svg"] = "exponential.svg"
        _write(out, files["svg"], text)
        report["svg_axes"] = axes.to_dict()
    _write(out, "exponential_summary.json", _dump_json(report))
    return EXIT_OK


def cmd_gaussian_example(args) -> int:
    cfg = _packaged_config("gaussian.json") if args.config is None else load_config(args.config)
    if cfg.model is None:
        raise ConfigError("the example needs a hierarchical model", "hierarchical")
    samples, seed, bins = _settings(args, cfg)
    bins = min(default_bins(samples), 50) if bins is None else bins
    n = cfg.base.dimension
    stats = lambda x: np.stack([Statistic.sum()(x), Statistic.sum_of_squares()(x)], axis=-1)  # noqa: E731

    t_uniform = implied_statistic_values(cfg.base, stats, SeededStream(seed, STREAM_UNIFORM), samples, args.workers)
    t_hier = implied_statistic_values(cfg.model, stats, SeededStream(seed, STREAM_HIERARCHICAL), samples, args.workers)
    h_uniform = Histogram2DSummary.from_values(t_uniform[:, 0], np.log(t_uniform[:, 1]), bins)
    h_hier = Histogram2DSummary.from_values(t_hier[:, 0], np.log(t_hier[:, 1]), bins)

    mu_lo, mu_hi = cfg.model.hyperprior.components[0].coord_bounds
    lo, hi = float(cfg.base.lo[0]), float(cfg.base.hi[0])
    second_moment = (lo * lo + lo * hi + hi * hi) / 3.0
    ks = ks_statistic(t_hier[:, 0] / n, ReferenceCdf.uniform(mu_lo, mu_hi))
    t2_mean = float(np.mean(t_uniform[:, 1] / n))
    checks = {
        "hierarchical_ks_le_0.05": bool(ks <= 0.05),
        "uniform_t2_over_n_within_1pct": bool(abs(t2_mean / second_moment - 1.0) <= 0.01),
    }
    ext = "csv" if args.format == "csv" else "json"
    files = {
        "uniform_histogram": f"gaussian_uniform_hist2d.{ext}",
        "hierarchical_histogram": f"gaussian_hierarchical_hist2d.{ext}",
    }
    out = Path(args.out)
    _write(out, files["uniform_histogram"], _histogram_text(h_uniform, args.format))
    _write(out, files["hierarchical_histogram"], _histogram_text(h_hier, args.format))
    report = {
        "schema": SCHEMA_VERSION,
        "command": "gaussian-example",
        "config": cfg.raw,
        "seed": seed,
        "samples": samples,
        "bins": bins,
        "axes": ["sum", "log(sum_of_squares)"],
        "uniform": {
            "sum": _summary(t_uniform[:, 0]),
            "sum_of_squares_over_n": {"mean": t2_mean, "reference": second_moment},
        },
        "hierarchical": {
            "sum_over_n": _summary(t_hier[:, 0] / n),
            "log_sum_of_squares": _summary(np.log(t_hier[:, 1])),
            "ks_uniform": ks,
            "ks_reference": [mu_lo, mu_hi],
        },
        "checks": checks,
        "passed": all(checks.values()),
        "files": files,
    }
    if args.svg:
        text, axes = svg.density_overlay(
            [
                ("uniform prior", h_uniform.edges1, h_uniform.edges2, h_uniform.densities, _ORANGE),
                ("hierarchical prior", h_hier.edges1, h_hier.edges2, h_hier.densities, _BLUE),
            ],
            title="sum and log sum of squares under two priors",
            xlabel="sum",
            ylabel="log(sum_of_squares)",
        )
        files["svg"] = "gaussian.svg"
        _write(out, files["svg"], text)
        report["svg_axes"] = axes.to_dict()
    _write(out, "gaussian_summary.json", _dump_json(report))
    return EXIT_OK


def _solve_moments(cfg: ModelConfig, tol: float) -> tuple[dict, bool]:
    if cfg.moments is None:
        raise ConfigError("--moments needs a 'moments' section", "moments")
    rep = solve_multipliers(cfg.base, cfg.moments, tol=tol)
    a, b = coordinate_exponents(cfg.moments.features, np.array(rep.multipliers), cfg.base.dimension)
    body = rep.to_dict()
    body["features"] = [f.kind for f in cfg.moments.features]
    body["coordinate_exponent"] = {"linear": float(a), "quadratic": float(b)}
    feats = cfg.moments.features
    lo = cfg.base.lo
    if len(feats) == 1 and feats[0].kind in ("mean", "sum") and np.all(lo == lo[0]) and np.all(cfg.base.hi == cfg.base.hi[0]):
        # distance of the exact truncated solution from the untruncated exponential -1/mu
        per_coord = cfg.moments.targets[0] / (1.0 if feats[0].kind == "mean" else cfg.base.dimension)
        mu = per_coord - float(lo[0])
        if mu > 0:
            body["untruncated_reference"] = {"linear": -1.0 / mu, "gap": float(a) + 1.0 / mu}
    return body, bool(rep.dual_gradient_norm <= tol)


def _solve_bins(cfg: ModelConfig, tol: float) -> tuple[dict, bool]:
    if cfg.discrete is None:
        raise ConfigError("--bins needs a 'discrete' section", "discrete")
    m, c = cfg.discrete
    lam = solve_bin_multipliers(m, c, tol=max(tol, 1e-12))
    g = np.where(np.isfinite(lam), np.exp(np.where(np.isfinite(lam), lam, 0.0)), 0.0)
    achieved = bin_marginals(reweight(m, g, c), m, c)
    gap = float(np.max(np.abs(achieved - np.array(c.target_probs))))
    body = {
        "multipliers": [_finite_or_none(v) for v in lam],
        "edges": list(c.edges),
        "targets": list(c.target_probs),
        "prior_bin_probabilities": prior_bin_probabilities(m, c).tolist(),
        "achieved_marginals": achieved.tolist(),
        "dual_gradient_norm": gap,
        "iterations": 0,
        "states": len(m.states),
        "backend": "closed-form",
    }
    return body, gap <= max(tol, 1e-12)


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    if not args.tol > 0:
        raise _UsageError("--tol must be positive")
    body, ok = _solve_bins(cfg, args.tol) if args.bins_mode else _solve_moments(cfg, args.tol)
    report = {
        "schema": SCHEMA_VERSION,
        "command": "solve",
        "mode": "bins" if args.bins_mode else "moments",
        "config": cfg.raw,
        "tol": args.tol,
        "report": body,
        "passed": bool(ok),
    }
    _emit(args, "solve", report, _solve_csv(body))
    return EXIT_OK if ok else EXIT_FAILED


def _solve_csv(body: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    achieved = body.get("achieved_moments", body.get("achieved_marginals"))
    w.writerow(["index", "multiplier", "target", "achieved"])
    for i, (lam, t, a) in enumerate(zip(body["multipliers"], body["targets"], achieved)):
        w.writerow([i, "" if lam is None else repr(lam), repr(t), repr(a)])
    return buf.getvalue()


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    if cfg.model is None:
        raise ConfigError("verify needs a hierarchical model", "hierarchical")
    if args.pairs < 1:
        raise _UsageError("--pairs must be positive")
    if not args.reltol > 0:
        raise _UsageError("--reltol must be positive")
    _, seed, _ = _settings(args, cfg)
    q = QuadratureSpec(cfg.quadrature.rule, args.reltol, cfg.quadrature.max_depth)
    stream = SeededStream(seed, STREAM_VERIFY)
    points = list(sample_hierarchical(cfg.model, stream, args.pairs))
    controls = max(1, min(10, args.pairs))
    rep, _ = run_sufficiency(cfg.model, points, args.pairs, controls, q, stream.generator(0, 2))
    report = {
        "schema": SCHEMA_VERSION,
        "command": "verify",
        "config": cfg.raw,
        "seed": seed,
        "pairs": args.pairs,
        "quadrature": {"rule": q.rule, "rel_tol": q.rel_tol, "max_depth": q.max_depth},
        "tolerance": 2.0 * q.rel_tol,
        "pair_kinds": rep.kinds,
        "differences": rep.differences,
        "max_difference": rep.max_difference,
        "control_differences": rep.control_differences,
        "sufficiency_passed": rep.sufficiency_passed,
        "controls_passed": rep.controls_passed,
        "passed": rep.passed,
    }
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "kind", "difference"])
    for i, (k, d) in enumerate(zip(rep.kinds, rep.differences)):
        w.writerow([i, k, repr(d)])
    for i, d in enumerate(rep.control_differences):
        w.writerow([i, "negative-control", repr(d)])
    _emit(args, "verify", report, buf.getvalue())
    return EXIT_OK if rep.passed else EXIT_FAILED


def _emit(args, stem: str, report: dict, csv_text: str) -> None:
    text = _dump_json(report) if args.format == "json" else csv_text
    sys.stdout.write(text)
    if args.out is not None:
        _write(Path(args.out), f"{stem}.{args.format}", text)
        if args.format == "csv":
            _write(Path(args.out), f"{stem}.json", _dump_json(report))


# --------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser, out_default, format_default: str, bins: bool = True) -> None:
    p.add_argument("--samples", type=int, default=None, help=f"sample count (default {DEFAULT_SAMPLES})")
    p.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")
    if bins:
        p.add_argument("--bins", type=int, default=None, help="histogram bins")
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default=format_default)
    p.add_argument("--svg", action=argparse.BooleanOptionalAction, default=True, help="write an SVG figure")
    p.add_argument("--workers", type=int, default=1, help="sampling threads")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hiermaxent", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, func, help_text in (
        ("exponential-example", cmd_exponential_example, "uniform vs hierarchical exponential prior"),
        ("gaussian-example", cmd_gaussian_example, "uniform vs hierarchical Gaussian prior"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="model config (default: packaged)")
        _common(p, "out", "csv")
        p.set_defaults(func=func)

    p = sub.add_parser("solve", help="solve for multipliers")
    p.add_argument("config")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--moments", action="store_false", dest="bins_mode", help="moment constraints")
    mode.add_argument("--bins", action="store_true", dest="bins_mode", help="bin-probability constraints")
    p.add_argument("--tol", type=float, default=1e-9)
    # --bins selects the constraint type here, so there is no histogram bin count
    _common(p, None, "json", bins=False)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="certify sufficiency of the statistics")
    p.add_argument("config")
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--reltol", type=float, default=1e-6)
    _common(p, None, "json")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "workers", 1) < 1:
            raise _UsageError("--workers must be positive")
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (InfeasibleConstraintError, UnsupportedModelError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConvergenceError, QuadratureError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
