"""Command-line front end.

``analyze``      estimate natural effects from a CSV file
``simulate``     run Monte Carlo tables from a scenario config
``sensitivity``  direct-effect curve over a grid of selection-bias functions

Every command writes a JSON report (``--out``) and, next to it, a
``<out>.manifest.json`` holding the resolved configuration, software version
and wall time.  The report itself contains no timing or host information, so
repeated runs with the same arguments produce byte-identical reports.

Errors are reported on stderr as a single line
``error: class=<class> message=<text>`` with the exit code given by
``mrmediation.errors.EXIT_CODES``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import SCALES, ColumnSchema, MediationDataset, empirical_positivity_report, load_csv
from .design import DesignSpec, NuisanceSpecs, main_effects_specs
from .errors import EXIT_CODES, ConfigError, MediationError
from .estimators import EFFECTS, check_scale, delta_estimate, effect_value
from .inference import bootstrap, bootstrap_report, effect_reports
from .nuisance import fit_nuisances
from .pipeline import ALL_KINDS, point_components, theta_value
from .sensitivity import make_grid, sensitivity_curve
from .simulation import ScenarioConfig, render_table, run_mc
from .stabilized import VARIANTS


def _clean(obj):
    """JSON-ready copy with non-finite floats replaced by None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def read_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def _write(out, report: dict, manifest: dict, extra: dict | None = None) -> None:
    if out is None:
        sys.stdout.write(dumps(report))
        return
    out = Path(out)
    out.write_text(dumps(report), encoding="utf-8")
    for suffix, text in (extra or {}).items():
        out.with_suffix(suffix).write_text(text, encoding="utf-8")
    Path(f"{out}.manifest.json").write_text(dumps(manifest), encoding="utf-8")


def _manifest(command: str, config: dict, seed, started: float, diagnostics: dict) -> dict:
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "wall_time_seconds": time.perf_counter() - started,
        "diagnostics": diagnostics,
    }


# ---------------------------------------------------------------- data and specs

def _schema(args) -> ColumnSchema:
    x = None if args.x_cols is None else tuple(c.strip() for c in args.x_cols.split(",") if c.strip())
    return ColumnSchema(args.y_col, args.e_col, args.m_col, x, args.outcome_kind)


def resolve_specs(args, d: MediationDataset) -> NuisanceSpecs:
    """Working-model specs from ``--spec`` or the per-model flags.

    Models not given in a file default to additive models in all covariates
    (logit outcome link for a binary outcome).
    """
    link = "logit" if d.outcome_kind == "binary" else "identity"
    default = main_effects_specs(d.x_names, outcome_link=link)
    parts = {name: getattr(default, name) for name in ("outcome", "mediator", "propensity")}
    if args.spec:
        data = read_config(args.spec)
        unknown = set(data) - set(parts)
        if unknown:
            raise ConfigError(f"unknown spec sections {sorted(unknown)}")
        for name, sub in data.items():
            parts[name] = DesignSpec.from_dict(sub, name)
    for name in parts:
        path = getattr(args, f"{name}_spec")
        if path:
            parts[name] = DesignSpec.from_dict(read_config(path), name)
    return NuisanceSpecs(parts["outcome"], parts["mediator"], parts["propensity"])


def _load(args):
    d = load_csv(args.csv, _schema(args))
    return d, resolve_specs(args, d)


# ---------------------------------------------------------------- commands

def _analytic_reports(d, fit, estimator, scales, level, method):
    out = []
    for scale in scales:
        out += effect_reports(d, fit, EFFECTS, scale, estimator, level, method)
    return out


def _bootstrap_reports(d, specs, fit, estimator, scales, level, reps, seed, workers):
    labels = [(est, scale) for scale in scales for est in EFFECTS]

    def pipeline(db):
        t, d0, d1 = point_components(db, specs, estimator)
        return np.array([effect_value(est, scale, t, d0, d1) for est, scale in labels])

    theta, _ = theta_value(d, estimator, fit, specs)
    d0, d1 = delta_estimate(d, fit, 0).value, delta_estimate(d, fit, 1).value
    boot = bootstrap(d, pipeline, B=reps, seed=seed, level=level, workers=workers)
    reports = [
        bootstrap_report(est, scale, effect_value(est, scale, theta, d0, d1), boot, j)
        for j, (est, scale) in enumerate(labels)
    ]
    return reports, boot


def cmd_analyze(args) -> int:
    started = time.perf_counter()
    d, specs = _load(args)
    scales = list(dict.fromkeys(args.scale))
    for scale in scales:
        check_scale(d, scale)
    d.require_both_arms()
    inference = args.inference or ("bootstrap" if args.estimator in VARIANTS else "sandwich")
    fit = fit_nuisances(d, specs)
    theta, theta_diag = theta_value(d, args.estimator, fit, specs)
    comp = {
        "theta0": theta,
        "delta0": delta_estimate(d, fit, 0).value,
        "delta1": delta_estimate(d, fit, 1).value,
    }
    boot_info = {}
    if inference == "bootstrap":
        reports, boot = _bootstrap_reports(d, specs, fit, args.estimator, scales, args.level,
                                           args.boot_reps, args.seed, args.workers)
        boot_info = {"replicates": boot.replicates, "failures": boot.failures, "warning": boot.warning}
    else:
        reports = _analytic_reports(d, fit, args.estimator, scales, args.level, inference)
    pos = empirical_positivity_report(d)
    config = {
        "csv": str(args.csv),
        "schema": {"y": args.y_col, "e": args.e_col, "m": args.m_col, "x": list(d.x_names),
                   "outcome_kind": d.outcome_kind},
        "specs": specs.to_dict(),
        "estimator": args.estimator,
        "inference": inference,
        "scales": scales,
        "level": args.level,
        "boot_reps": args.boot_reps if inference == "bootstrap" else None,
        "seed": args.seed,
    }
    report = {
        "command": "analyze",
        "config": config,
        "n": d.n,
        "components": comp,
        "estimates": [r.to_dict() for r in reports],
        "diagnostics": {**theta_diag, "bootstrap": boot_info},
        "positivity": {
            "cells": {f"E={e},M={m}": c for (e, m), c in pos.counts.items()},
            "warnings": list(pos.warnings),
        },
    }
    diag = {"floor_events": theta_diag.get("floor_events", 0.0), "positivity_warnings": len(pos.warnings)}
    _write(args.out, report, _manifest("analyze", config, args.seed, started, diag))
    return 0


def _scenario_configs(data: dict) -> list[ScenarioConfig]:
    """A config is either one scenario or ``{"rows": [...], **shared}``."""
    data = dict(data)
    rows = data.pop("rows", None)
    if rows is None:
        return [ScenarioConfig.from_dict(data)]
    if not isinstance(rows, list) or not rows:
        raise ConfigError("rows must be a non-empty list")
    return [ScenarioConfig.from_dict({**data, **row}) for row in rows]


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    data = read_config(args.config)
    if args.replicates is not None:
        data["replicates"] = args.replicates
    if args.seed is not None:
        data["seed"] = args.seed
    configs = _scenario_configs(data)
    reports = [run_mc(c, workers=args.workers) for c in configs]
    stats = tuple(args.statistics.split(","))
    table = render_table(reports, stats)
    payload = {"command": "simulate", "table": [r.to_dict() for r in reports]}
    resolved = {"rows": [c.to_dict() for c in configs], "statistics": list(stats)}
    diag = {"failure_flags": sum(r.failure_flag for r in reports),
            "floor_events": sum(s.floor_events for r in reports for s in r.summaries)}
    if args.out is None:
        sys.stdout.write(table)
    else:
        _write(args.out, payload, _manifest("simulate", resolved, configs[0].seed, started, diag),
               {".csv": table})
    return 0


def _grid_settings(args) -> tuple[str, list]:
    family, lambdas = args.family, args.lambdas
    if args.grid:
        data = read_config(args.grid)
        unknown = set(data) - {"family", "lambdas"}
        if unknown:
            raise ConfigError(f"unknown grid keys {sorted(unknown)}")
        family = data.get("family", family)
        lambdas = data.get("lambdas", lambdas)
    if lambdas is None:
        raise ConfigError("no sensitivity grid given; use --grid or --lambdas")
    if isinstance(lambdas, str):
        lambdas = [float(v) for v in lambdas.split(",") if v.strip()] if lambdas.strip() else []
    return family, list(lambdas)


def cmd_sensitivity(args) -> int:
    started = time.perf_counter()
    family, lambdas = _grid_settings(args)
    grid = make_grid(family, lambdas)
    d, specs = _load(args)
    result = sensitivity_curve(d, specs, grid, B=args.boot_reps, seed=args.seed, level=args.level,
                               workers=args.workers)
    config = {"csv": str(args.csv), "specs": specs.to_dict(), "family": family, "lambdas": lambdas,
              "boot_reps": args.boot_reps, "seed": args.seed, "level": args.level}
    report = {"command": "sensitivity", "config": config, "n": d.n, **result.to_dict()}
    diag = {"bootstrap_failures": result.failures}
    _write(args.out, report, _manifest("sensitivity", config, args.seed, started, diag))
    return 0


# ---------------------------------------------------------------- parser

def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--csv", required=True, help="input CSV with a header row")
    p.add_argument("--y-col", default="y")
    p.add_argument("--e-col", default="e")
    p.add_argument("--m-col", default="m")
    p.add_argument("--x-cols", default=None, help="comma-separated covariates (default: all other columns)")
    p.add_argument("--outcome-kind", choices=("auto", "continuous", "binary"), default="auto")
    p.add_argument("--spec", help="JSON file with outcome/mediator/propensity sections")
    p.add_argument("--outcome-spec", help="JSON file with the outcome model spec")
    p.add_argument("--mediator-spec", help="JSON file with the mediator model spec")
    p.add_argument("--propensity-spec", help="JSON file with the propensity model spec")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrmediation", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="estimate natural direct and indirect effects")
    _data_flags(p)
    p.add_argument("--estimator", choices=ALL_KINDS, default="triply")
    p.add_argument("--scale", nargs="+", choices=SCALES, default=["difference"])
    p.add_argument("--inference", choices=("sandwich", "eif_plugin", "bootstrap"), default=None,
                   help="default: sandwich, or bootstrap for the stabilized estimators")
    p.add_argument("--boot-reps", type=int, default=500)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="report path (JSON); stdout when omitted")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="run a Monte Carlo table")
    p.add_argument("config", help="scenario config (JSON)")
    p.add_argument("--replicates", type=int, default=None, help="override the config")
    p.add_argument("--seed", type=int, default=None, help="override the config")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--statistics", default="bias,mc_se", help="comma-separated table statistics")
    p.add_argument("--out", help="report path (JSON); the table goes to the same stem with .csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sensitivity", help="direct effect over a grid of selection-bias functions")
    _data_flags(p)
    p.add_argument("--grid", help="JSON file with family and lambdas")
    p.add_argument("--family", default="constant")
    p.add_argument("--lambdas", default=None, help="comma-separated values, e.g. -1,0,1")
    p.add_argument("--boot-reps", type=int, default=500)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sensitivity)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with np.errstate(all="ignore"):
            return args.func(args)
    except (MediationError, OSError, ValueError) as exc:
        if isinstance(exc, MediationError):
            cls = exc.error_class
        else:
            cls = "config" if isinstance(exc, OSError) else "error"
        msg = " ".join(str(exc).split())
    print(f"error: class={cls} message={msg}", file=sys.stderr)
    return EXIT_CODES.get(cls, 1)


if __name__ == "__main__":
    sys.exit(main())
