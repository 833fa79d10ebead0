"""Command-line interface: ``elw estimate`` and ``elw simulate``.

Reports go to standard output and diagnostics to standard error. Exit codes:
0 success, 2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import warnings

import numpy as np

from .dataio import EstimateRow, FORMATS, load_csv, parse_config, write_report
from .estimators import Unadjusted
from .exceptions import (ELWError, RankDeficient, SingularD, SolverError,
                         TooManyFailures)
from .inference import bootstrap_se, wald
from .simlab import (ScenarioConfig, custom_needs_propensity, default_estimators,
                     generate, run_monte_carlo)

log = logging.getLogger("elw")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (SolverError, RankDeficient, SingularD, TooManyFailures,
                  np.linalg.LinAlgError)
SCENARIO_CHOICES = ("sim2-linear", "sim2-nonlinear", "sim3", "sim4", "custom")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def build_parser():
    parser = _Parser(prog="elw", description=(
        "Empirical-likelihood-weighted treatment effects for randomized trials."))
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    est = sub.add_parser("estimate", help="estimate effects on a CSV dataset")
    est.add_argument("--data", required=True, help="trial CSV file")
    est.add_argument("--config", required=True, help="JSON run configuration")
    est.add_argument("--out", help="also write the report to this file")
    est.add_argument("--threads", type=_positive_int, default=1,
                     help="bootstrap worker threads (results do not depend on it)")
    est.add_argument("--seed", type=int, help="bootstrap seed (default: config, "
                     "then $ELW_SEED, then 0)")
    est.add_argument("--format", choices=FORMATS, help="report format")

    sim = sub.add_parser("simulate", help="run a Monte Carlo study")
    sim.add_argument("--scenario", required=True, choices=SCENARIO_CHOICES)
    sim.add_argument("--n", type=int, default=400, help="sample size per data set")
    sim.add_argument("--delta", type=float, default=0.5,
                     help="probability of treatment assignment")
    sim.add_argument("--reps", type=int, default=1000, help="Monte Carlo replicates")
    sim.add_argument("--bootstrap", type=int, default=0,
                     help="bootstrap replicates per data set (0 disables)")
    sim.add_argument("--seed", type=int, help="master seed (default $ELW_SEED, then 0)")
    sim.add_argument("--config", help="JSON configuration with estimators and/or "
                     "custom scenario parameters")
    sim.add_argument("--threads", type=_positive_int, default=1,
                     help="worker threads (results do not depend on it)")
    sim.add_argument("--out", help="also write the table to this file")
    sim.add_argument("--format", choices=FORMATS, default=None, help="table format")
    return parser


def _resolve_seed(flag, config_seed=None):
    if flag is not None:
        seed = flag
    elif config_seed is not None:
        seed = config_seed
    else:
        env = os.environ.get("ELW_SEED")
        try:
            seed = int(env) if env not in (None, "") else 0
        except ValueError:
            raise ValueError(f"ELW_SEED must be an integer, got {env!r}") from None
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return seed


def _emit(report, out):
    sys.stdout.write(report)
    sys.stdout.flush()
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(report)


def _describe(tag, estimator):
    result = getattr(estimator, "result_", None)
    if result is None:
        return
    parts = [f"{tag}: method={result.method}"]
    for arm in ("treated", "control"):
        diag = result.diagnostics.get(arm)
        if diag:
            parts.append(f"{arm} iterations={diag['iterations']} "
                         f"augmented={diag['augmented']}")
    if result.diagnostics.get("separation"):
        parts.append("separation in " + ", ".join(result.diagnostics["separation"]))
    log.info("; ".join(parts))


def cmd_estimate(args):
    config = parse_config(args.config)
    data = load_csv(args.data, config.schema)
    seed = _resolve_seed(args.seed, config.seed)
    B = config.bootstrap_replicates
    log.info("loaded %d subjects (m=%d, n=%d, observed %d/%d)",
             data.N, data.m, data.n, data.m0, data.n0)
    ref_se = math.nan
    if B:
        ref = Unadjusted(observed_only=data.has_missing)
        ref_se = bootstrap_se(data, ref, B, seed, config.stratified, args.threads).se
    rows = []
    for spec in config.estimators:
        estimator = spec.build(data.covariate_names, config.solver)
        try:
            estimator.fit_data(data)
        except ELWError as exc:
            raise type(exc)(f"estimator {spec.name!r}: {exc}") from exc
        _describe(spec.name, estimator)
        theta = estimator.theta_
        se = stat = rel = math.nan
        if B:
            boot = bootstrap_se(data, estimator, B, seed, config.stratified, args.threads)
            if boot.failures:
                log.warning("%s: %d of %d bootstrap replicates failed",
                            spec.name, boot.failures, B)
            se = boot.se
            stat = wald(theta, se).test_stat
            rel = ref_se ** 2 / se ** 2 if se > 0 else math.nan
        rows.append(EstimateRow(spec.name, theta, se, stat, rel))
    _emit(write_report(rows, args.format or config.output), args.out)
    return EXIT_OK


def cmd_simulate(args):
    config = parse_config(args.config) if args.config else None
    seed = _resolve_seed(args.seed, config.seed if config else None)
    cfg = ScenarioConfig(args.scenario, n=args.n, delta=args.delta, reps=args.reps,
                         bootstrap_B=args.bootstrap, seed=seed,
                         params=config.scenario_params if config else {})
    if config is not None and config.estimators:
        names = generate(cfg, np.random.default_rng(0)).covariate_names
        estimators = [(s.name, s.build(names, config.solver)) for s in config.estimators]
    else:
        estimators = default_estimators(cfg.scenario, custom_needs_propensity(cfg))
    log.info("simulating %s: n=%d delta=%g reps=%d B=%d seed=%d",
             cfg.scenario, cfg.n, cfg.delta, cfg.reps, cfg.bootstrap_B, seed)
    rows = run_monte_carlo(cfg, estimators, n_jobs=args.threads)
    for row in rows:
        if row.failures:
            log.warning("%s: %d of %d replicates failed", row.estimator,
                        row.failures, cfg.reps)
    fmt = args.format or (config.output if config else "markdown")
    _emit(write_report(rows, fmt), args.out)
    return EXIT_OK


def _configure_logging(verbose):
    for handler in list(log.handlers):
        log.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("elw: %(levelname)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO if verbose else logging.WARNING)
    log.propagate = False


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    handler = cmd_estimate if args.command == "estimate" else cmd_simulate
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return handler(args)
    except NUMERIC_ERRORS as exc:
        print(f"elw: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ELWError, ValueError, OSError) as exc:
        print(f"elw: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
