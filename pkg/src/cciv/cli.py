"""Command-line front end.

Subcommands: ``infer`` (run the combined inference pipeline on a dataset),
``simulate`` (write one simulated dataset as CSV), ``power`` (Monte Carlo
power table, optionally with an SVG chart), ``limit-experiment`` (rejection
rates in the trivariate-normal limit experiment), and ``validate`` (run the
dataset diagnostics).

Exit codes: 0 success, 2 data-validation / configuration / usage problems,
3 numerical failures.  The seed falls back to the ``CCIV_SEED`` environment
variable when no ``--seed`` is given.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import __version__
from .combine import REPORT_CSV_COLUMNS, InferenceConfig, run_inference
from .data import load_csv, validate
from .exceptions import CcivError, InvalidInput, ParseError, SchemaError, ValidationFailed
from .oracle import limit_experiment_table
from .simulate import (
    DGPConfig,
    gen_dataset,
    get_preset,
    load_config,
    power_curve,
)
from .svgchart import render_power_svg

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

DEFAULT_SEED = 20260810


def _seed_fallback(value: int | None) -> int | None:
    if value is not None:
        return value
    env = os.environ.get("CCIV_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise InvalidInput(f"CCIV_SEED must be an integer, got {env!r}") from None


def _resolve_dgp(args) -> DGPConfig:
    if args.preset and args.config:
        raise InvalidInput("give either --preset or --config, not both")
    if args.preset:
        config = get_preset(args.preset)
    elif args.config:
        config = load_config(args.config)
    else:
        raise InvalidInput("one of --preset or --config is required")
    overrides = {}
    if args.reps is not None:
        overrides["replications"] = args.reps
    seed = _seed_fallback(args.seed)
    if seed is not None:
        overrides["seed"] = seed
    if getattr(args, "alpha", None) is not None:
        overrides["alpha_level"] = args.alpha
    if getattr(args, "weighting", None) is not None:
        overrides["weighting"] = args.weighting
    return dataclasses.replace(config, **overrides) if overrides else config


def _cmd_infer(args) -> int:
    inf_config = InferenceConfig(
        alpha_level=args.alpha if args.alpha is not None else 0.05,
        weighting=args.weighting or "tsls",
    )
    data = load_csv(args.data)
    report = run_inference(data, args.beta0, inf_config)
    if args.csv:
        print(",".join(REPORT_CSV_COLUMNS))
        print(report.to_csv_row())
    else:
        print(report.to_text())
    if report.valid:
        return EXIT_OK
    print(f"error: {report.error}", file=sys.stderr)
    return EXIT_INVALID if report.error_kind == "validation" else EXIT_NUMERICAL


def _cmd_simulate(args) -> int:
    from .data import write_csv

    config = _resolve_dgp(args)
    data, _ = gen_dataset(config, args.rep)
    write_csv(data, args.out)
    print(f"wrote {data.n} rows, {data.partition.n_clusters} clusters to {args.out}")
    return EXIT_OK


def _cmd_power(args) -> int:
    config = _resolve_dgp(args)
    table = power_curve(config, workers=args.workers)
    csv_text = table.to_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    if args.svg:
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(render_power_svg(table, config.alpha_level))
    gap = float((table.rate("combined") - table.rate("wald")).max())
    print(
        f"max power gap combined-wald: {gap:.4f}; "
        f"invalid replications: {table.invalid_count} of {table.replications}",
        file=sys.stderr,
    )
    return EXIT_OK


def _cmd_limit_experiment(args) -> int:
    deltas = [float(v) for v in args.delta_grid.split(",") if v.strip()]
    if not deltas:
        raise InvalidInput("--delta-grid must contain at least one value")
    seed = _seed_fallback(args.seed)
    table = limit_experiment_table(
        a1=args.a1,
        a2=args.a2,
        rho1=args.rho1,
        rho2=args.rho2,
        deltas=deltas,
        replications=args.reps if args.reps is not None else 100_000,
        seed=seed if seed is not None else DEFAULT_SEED,
        alpha_level=args.alpha if args.alpha is not None else 0.05,
    )
    csv_text = table.to_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def _cmd_validate(args) -> int:
    data = load_csv(args.data)
    report = validate(data)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_INVALID


def _add_seed_reps(parser, with_workers=False):
    parser.add_argument("--seed", type=int, default=None, help="RNG seed (falls back to CCIV_SEED)")
    parser.add_argument("--reps", type=int, default=None, help="number of Monte Carlo replications")
    if with_workers:
        parser.add_argument(
            "--workers",
            type=int,
            default=None,
            help="worker processes (default: available parallelism; output is worker-count independent)",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cciv",
        description="Combined Wald / jackknife LM / jackknife AR inference "
        "for clustered IV regression, plus its Monte Carlo harness.",
    )
    parser.add_argument("--version", action="version", version=f"cciv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_infer = sub.add_parser("infer", help="run combined inference on a CSV dataset")
    p_infer.add_argument("data", help="path to the dataset CSV")
    p_infer.add_argument("--beta0", type=float, required=True, help="null value to test")
    p_infer.add_argument("--alpha", type=float, default=None, help="test level (default 0.05)")
    p_infer.add_argument(
        "--weighting", choices=["tsls", "gmm"], default=None, help="GMM weighting matrix"
    )
    p_infer.add_argument("--csv", action="store_true", help="emit a one-row CSV instead of the text block")
    p_infer.set_defaults(func=_cmd_infer)

    p_sim = sub.add_parser("simulate", help="generate one simulated dataset as CSV")
    p_sim.add_argument("--preset", default=None, help="named simulation preset")
    p_sim.add_argument("--config", default=None, help="path to a key = value config file")
    p_sim.add_argument("--rep", type=int, default=0, help="replication index of the stream")
    p_sim.add_argument("--out", required=True, help="output CSV path")
    _add_seed_reps(p_sim)
    p_sim.set_defaults(func=_cmd_simulate, alpha=None, weighting=None)

    p_power = sub.add_parser("power", help="Monte Carlo power table over the null grid")
    p_power.add_argument("--preset", default=None, help="named simulation preset")
    p_power.add_argument("--config", default=None, help="path to a key = value config file")
    p_power.add_argument("--alpha", type=float, default=None, help="test level override")
    p_power.add_argument(
        "--weighting", choices=["tsls", "gmm"], default=None, help="GMM weighting override"
    )
    p_power.add_argument("--out", default=None, help="write the table CSV here (default: stdout)")
    p_power.add_argument("--svg", default=None, help="also write a line chart to this path")
    _add_seed_reps(p_power, with_workers=True)
    p_power.set_defaults(func=_cmd_power)

    p_limit = sub.add_parser(
        "limit-experiment",
        help="rejection rates of the combination rule in the normal limit experiment",
    )
    p_limit.add_argument("--a1", type=float, default=1.0, help="noncentrality slope of the first statistic")
    p_limit.add_argument("--a2", type=float, default=1.0, help="noncentrality slope of the second statistic")
    p_limit.add_argument("--rho1", type=float, default=0.0, help="correlation of statistics 1 and 2")
    p_limit.add_argument("--rho2", type=float, default=0.0, help="correlation of statistics 2 and 3")
    p_limit.add_argument(
        "--delta-grid",
        default="0,0.5,1,2",
        help="comma-separated local alternative values",
    )
    p_limit.add_argument("--alpha", type=float, default=None, help="test level (default 0.05)")
    p_limit.add_argument("--out", default=None, help="write the table CSV here (default: stdout)")
    _add_seed_reps(p_limit)
    p_limit.set_defaults(func=_cmd_limit_experiment)

    p_val = sub.add_parser("validate", help="run the dataset diagnostics on a CSV")
    p_val.add_argument("data", help="path to the dataset CSV")
    p_val.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationFailed as exc:
        print(exc.report.summary(), file=sys.stderr)
        return EXIT_INVALID
    except (InvalidInput, SchemaError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CcivError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
