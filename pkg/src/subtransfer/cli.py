"""Command-line front end.

Subcommands::

    subtransfer simulate CONFIG.json [--workers N] [--output PATH]
    subtransfer fit TARGET.csv EXTERNAL.csv [--penalty l1|l2] [--sampler ...] [--rate R] ...
    subtransfer screen TARGET.csv [--q 0.1] [--output PATH]
    subtransfer probs EXTERNAL.csv --scheme uniform|leverage|osmac --rate R [--pilot TARGET.csv]

Exit codes: 0 success, 1 runtime failure, 2 parse error, 3 validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import csvio
from .datamodel import PenaltySpec, SubsampleSelection, assemble_problem
from .errors import (
    ConfigParseError,
    CsvParseError,
    DimensionMismatch,
    SubtransferError,
    ValidationError,
)
from .estimator import SolverSettings, fit_ols
from .sampling import (
    combined_select,
    optimal_probabilities,
    osmac_probabilities,
    poisson_sample,
    target_guided_select,
    uniform_probabilities,
)
from .screening import screen
from .simulation import ExperimentConfig, ScenarioConfig, run_experiment
from .tuning import tune

EXIT_OK, EXIT_RUNTIME, EXIT_PARSE, EXIT_VALIDATION = 0, 1, 2, 3

SAMPLERS = ("full", "uniform", "leverage", "osmac", "tg", "combined")


# -- configuration -------------------------------------------------------------

def _config_fields() -> dict:
    """Every accepted config key with its default value."""
    keys = {}
    for f in dataclasses.fields(ScenarioConfig):
        keys[f.name] = f.default
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "scenario":
            continue
        keys[f.name] = f.default
    return keys


CONFIG_DEFAULTS = _config_fields()


def _check_type(key: str, value, default):
    def bad(expected):
        return ConfigParseError(f"config key {key!r}: expected {expected}, got {value!r}")

    if key == "coef":
        if isinstance(value, bool):
            raise bad("a number or a list of numbers")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                           for v in value):
            return tuple(float(v) for v in value)
        raise bad("a number or a list of numbers")
    if key in ("rates", "estimators"):
        elem = str if key == "estimators" else (int, float)
        if not isinstance(value, list) or not all(
                isinstance(v, elem) and not isinstance(v, bool) for v in value):
            raise bad(f"a list of {'strings' if key == 'estimators' else 'numbers'}")
        return tuple(value)
    if key == "output":
        if value is not None and not isinstance(value, str):
            raise bad("a string or null")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise bad("true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise bad("a string")
        return value
    return value


def parse_config(text: str) -> ExperimentConfig:
    """Build an experiment from a flat JSON object.

    Unknown keys and wrongly typed values raise :class:`ConfigParseError`;
    values of the right type but outside their range raise
    :class:`ValidationError`.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigParseError("config must be a JSON object")
    unknown = sorted(set(raw) - set(CONFIG_DEFAULTS))
    if unknown:
        raise ConfigParseError(f"unknown config key {unknown[0]!r}")
    vals = {k: _check_type(k, v, CONFIG_DEFAULTS[k]) for k, v in raw.items()}
    scen_keys = {f.name for f in dataclasses.fields(ScenarioConfig)}
    try:
        scenario = ScenarioConfig(**{k: v for k, v in vals.items() if k in scen_keys})
        return ExperimentConfig(scenario=scenario,
                                **{k: v for k, v in vals.items() if k not in scen_keys})
    except TypeError as exc:
        raise ValidationError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


# -- subcommands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    exp = load_config(args.config)
    if args.workers < 1:
        raise ValidationError("--workers must be >= 1")
    result = run_experiment(exp, workers=args.workers)
    text = result.to_csv()
    dest = args.output or exp.output
    if dest:
        Path(dest).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _nominal_size(rate: float, n_B: int) -> float:
    if not 0 < rate <= 1:
        raise ValidationError(f"rate must lie in (0, 1], got {rate}")
    return rate * n_B


def select_rows(sampler: str, target, external, rate: float, rng, c: float = 0.5):
    """External subsample for a single fit."""
    n_B = external.n
    if sampler == "full":
        return SubsampleSelection.unit(np.arange(n_B), n_B)
    r = _nominal_size(rate, n_B)
    if sampler == "uniform":
        return poisson_sample(uniform_probabilities(n_B, r), rng)
    if sampler == "leverage":
        return poisson_sample(optimal_probabilities(external.X, r), rng)
    beta_T = fit_ols(target)
    if sampler == "osmac":
        return poisson_sample(osmac_probabilities(external.X, external.y, beta_T, r), rng)
    if sampler == "tg":
        return target_guided_select(external, beta_T, max(1, round(r)))
    if sampler == "combined":
        probs = optimal_probabilities(external.X, (1 - c) * r) if c < 1 else None
        return combined_select(external, beta_T, probs, r, c, rng)
    raise ValidationError(f"unknown sampler {sampler!r}")


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def cmd_fit(args) -> int:
    target, names = csvio.read_dataset(args.target, intercept=not args.no_intercept)
    external, _ = csvio.read_dataset(args.external, intercept=not args.no_intercept)
    if external.d != target.d:
        raise DimensionMismatch(f"external data has {external.d} columns, target has {target.d}")
    rng = np.random.default_rng(args.seed)
    sel = select_rows(args.sampler, target, external, args.rate, rng, args.c)
    problem = assemble_problem(target, external, sel, PenaltySpec(args.penalty, 1.0))
    settings = SolverSettings(tol=args.tol, max_iter=args.max_iter)
    fit, _ = tune(problem, args.criterion, args.grid_size, settings)
    out = {
        "names": names,
        "beta": [float(b) for b in fit.beta],
        "lambda": float(fit.penalty.lam),
        "df": float(fit.df),
        "aic": _num(fit.aic),
        "bic": _num(fit.bic),
        "selection_size": int(sel.indices.size),
        "converged": bool(fit.converged),
        "iterations": int(fit.iterations),
        "sampler": args.sampler,
    }
    sys.stdout.write(json.dumps(out, indent=2) + "\n")
    return EXIT_OK


def cmd_screen(args) -> int:
    header, table = csvio.read_table(args.target)
    if table.shape[1] < 2:
        raise CsvParseError(f"{args.target}: need at least one covariate and a response column")
    res = screen(table[:, :-1], table[:, -1], args.q)
    rows = zip(header[:-1], res.t_stat, res.p_value, res.selected.astype(int))
    text = csvio.write_table(("covariate", "t_stat", "p_value", "selected"), rows, args.output)
    if not args.output:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_probs(args) -> int:
    external, _ = csvio.read_dataset(args.external, intercept=not args.no_intercept)
    r = _nominal_size(args.rate, external.n)
    if args.scheme == "uniform":
        probs = uniform_probabilities(external.n, r)
    elif args.scheme == "leverage":
        probs = optimal_probabilities(external.X, r)
    else:
        if args.pilot:
            pilot_data, _ = csvio.read_dataset(args.pilot, intercept=not args.no_intercept)
            if pilot_data.d != external.d:
                raise DimensionMismatch(
                    f"pilot data has {pilot_data.d} columns, external has {external.d}")
        else:
            pilot_data = external
        probs = osmac_probabilities(external.X, external.y, fit_ols(pilot_data), r)
    text = csvio.write_probabilities(probs, args.output)
    if not args.output:
        sys.stdout.write(text)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subtransfer",
                                description="Transfer learning from contaminated external data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a Monte-Carlo experiment from a JSON config")
    s.add_argument("config")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--output", help="results CSV (default: config 'output' or stdout)")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit on target and external CSV files")
    f.add_argument("target")
    f.add_argument("external")
    f.add_argument("--penalty", choices=("l1", "l2"), default="l1")
    f.add_argument("--sampler", choices=SAMPLERS, default="tg")
    f.add_argument("--rate", type=float, default=0.12)
    f.add_argument("--criterion", choices=("aic", "bic"), default="bic")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--c", type=float, default=0.5, help="target-guided share for --sampler combined")
    f.add_argument("--grid-size", type=int, default=20)
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--max-iter", type=int, default=1000)
    f.add_argument("--no-intercept", action="store_true")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("screen", help="marginal t-tests with Benjamini-Hochberg selection")
    c.add_argument("target")
    c.add_argument("--q", type=float, default=0.1)
    c.add_argument("--output")
    c.set_defaults(func=cmd_screen)

    r = sub.add_parser("probs", help="export subsampling probabilities")
    r.add_argument("external")
    r.add_argument("--scheme", choices=("uniform", "leverage", "osmac"), default="leverage")
    r.add_argument("--rate", type=float, required=True)
    r.add_argument("--pilot", help="CSV whose least-squares fit is the osmac pilot "
                                   "(default: the external data)")
    r.add_argument("--no-intercept", action="store_true")
    r.add_argument("--output")
    r.set_defaults(func=cmd_probs)
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigParseError, CsvParseError)):
        return EXIT_PARSE
    if isinstance(exc, (ValidationError, DimensionMismatch)):
        return EXIT_VALIDATION
    return EXIT_RUNTIME


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SubtransferError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
