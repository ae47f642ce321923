"""Command-line entry point.

    recovera gen --config data/demo/scenario.json --out demo/ --seed 7
    recovera report --config data/demo/config.json --data demo/ --out out/

Every analysis subcommand takes ``--config``, ``--data`` and ``--out``; ``gen``
reads a scenario document instead of a study config.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import __version__
from .errors import AnalysisError, ConfigError, DataError, InfeasibleSpec
from .ingest import Dataset, parse_dataset
from .milestones import compute_milestones, write_milestones
from .model import StudyConfig, load_config, with_overrides
from .logs import configure_logging
from .report import (
    DISPARITY_JSON,
    DISTRIBUTION_CSV,
    LAGS_JSON,
    MILESTONES_CSV,
    REGRESSION_JSON,
    SEQUENCES_CSV,
    VULNERABILITY_CSV,
    build_report,
    disparity_payload,
    lags_payload,
    read_seed,
    regression_payload,
    write_bundle,
    write_distribution,
    write_json,
)
from .synth import generate_scenario, load_scenario, with_seed
from .trajectory import (
    CONSECUTIVE,
    DistributionRow,
    assign_sequences,
    format_regression_table,
    lag_summary,
    regression_table,
    sequence_distribution,
    write_sequences,
)
from .vulnerability import (
    income_by_pde_quantile,
    income_by_sequence,
    lag_percent_change,
    unit_profiles,
    write_vulnerability,
)

logger = logging.getLogger("recovera")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2

ANALYSES = ("milestones", "sequences", "lags", "regress", "vuln", "disparity", "report")


def _common_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument(
        "--logging-level",
        choices=("debug", "info", "warning", "warn", "error", "critical"),
        help="Overrides the RECOVERA_LOG environment variable.",
    )
    return parent


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def _analysis_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=Path, help="Study config JSON; defaults apply when omitted.")
    parent.add_argument("--data", type=Path, required=True, help="Directory with the five input CSVs.")
    parent.add_argument("--out", type=Path, required=True, help="Output directory.")
    parent.add_argument("--threads", type=_positive_int, default=1, help="Worker threads; results do not depend on it.")
    parent.add_argument("--normalize-lags", action="store_true", help="Min-max normalize lags before regression.")
    parent.add_argument(
        "--consecutive-lags", action="store_true", help="Measure lags between consecutive milestones."
    )
    return parent


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    analysis = _analysis_flags()
    parser = argparse.ArgumentParser(
        prog="recovera", description="Post-disaster recovery milestones and trajectories."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", metavar="command")

    gen = commands.add_parser("gen", parents=[common], help="Generate a synthetic scenario.")
    gen.add_argument("--config", type=Path, required=True, help="Scenario JSON.")
    gen.add_argument("--out", type=Path, required=True, help="Directory for the generated CSVs.")
    gen.add_argument("--seed", type=int, help="Overrides the scenario seed.")

    helps = {
        "milestones": "Detect recovery milestones per unit.",
        "sequences": "Classify units into milestone sequences.",
        "lags": "Summarize lags per sequence.",
        "regress": "Robust regressions between consecutive lags.",
        "vuln": "Per-unit damage extent and income quantiles.",
        "disparity": "Lag changes across income groups.",
        "report": "Run the whole pipeline and write the report bundle.",
    }
    for name in ANALYSES:
        commands.add_parser(name, parents=[common, analysis], help=helps[name])
    return parser


def _study_config(args: argparse.Namespace) -> StudyConfig:
    cfg = load_config(args.config) if args.config else StudyConfig()
    return with_overrides(
        cfg,
        normalize_lags=True if args.normalize_lags else None,
        lag_mode=CONSECUTIVE if args.consecutive_lags else None,
    )


def _print_distribution(rows: Sequence[DistributionRow]) -> None:
    print(f"{'label':<6} {'count':>6} {'percent':>8}  description")
    for row in rows:
        print(f"{row.label.value:<6} {row.count:>6} {row.percent:>8.2f}  {row.label.description}")


def _gen(args: argparse.Namespace) -> None:
    spec = with_seed(load_scenario(args.config), args.seed)
    generate_scenario(spec, args.out)


def _milestones(args: argparse.Namespace, cfg: StudyConfig, ds: Dataset) -> None:
    table = compute_milestones(ds, cfg, args.threads)
    write_milestones(args.out / MILESTONES_CSV, table)


def _sequences(args: argparse.Namespace, cfg: StudyConfig, ds: Dataset) -> None:
    table = compute_milestones(ds, cfg, args.threads)
    assignments = assign_sequences(table.milestones, cfg.lag_mode)
    write_sequences(args.out / SEQUENCES_CSV, assignments)
    rows = sequence_distribution(assignments)
    write_distribution(args.out / DISTRIBUTION_CSV, rows)
    _print_distribution(rows)


def _lags(args: argparse.Namespace, cfg: StudyConfig, ds: Dataset) -> None:
    table = compute_milestones(ds, cfg, args.threads)
    assignments = assign_sequences(table.milestones, cfg.lag_mode)
    write_json(args.out / LAGS_JSON, lags_payload(lag_summary(assignments)))


def _regress(args: argparse.Namespace, cfg: StudyConfig, ds: Dataset) -> None:
    table = compute_milestones(ds, cfg, args.threads)
    assignments = assign_sequences(table.milestones, cfg.lag_mode)
    rows = regression_table(assignments, cfg, threads=args.threads)
    write_json(args.out / REGRESSION_JSON, regression_payload(rows))
    print(format_regression_table(rows))


def _vuln(args: argparse.Namespace, cfg: StudyConfig, ds: Dataset) -> None:
    write_vulnerability(args.out / VULNERABILITY_CSV, unit_profiles(ds, cfg))


def _disparity(args: argparse.Namespace, cfg: StudyConfig, ds: Dataset) -> None:
    table = compute_milestones(ds, cfg, args.threads)
    assignments = assign_sequences(table.milestones, cfg.lag_mode)
    profiles = unit_profiles(ds, cfg)
    k = cfg.income_quantile_count
    payload = disparity_payload(
        lag_percent_change(assignments, profiles, k),
        income_by_sequence(assignments, profiles, k),
        income_by_pde_quantile(profiles, k),
    )
    write_json(args.out / DISPARITY_JSON, payload)


def _report(args: argparse.Namespace, cfg: StudyConfig, ds: Dataset) -> None:
    bundle = build_report(ds, cfg, args.threads, read_seed(args.data))
    write_bundle(bundle, args.out)


HANDLERS: dict[str, Callable[[argparse.Namespace, StudyConfig, Dataset], None]] = {
    "milestones": _milestones,
    "sequences": _sequences,
    "lags": _lags,
    "regress": _regress,
    "vuln": _vuln,
    "disparity": _disparity,
    "report": _report,
}


def _dispatch(args: argparse.Namespace) -> None:
    if args.command == "gen":
        _gen(args)
        return
    cfg = _study_config(args)
    ds = parse_dataset(args.data, cfg, args.threads)
    args.out.mkdir(parents=True, exist_ok=True)
    HANDLERS[args.command](args, cfg, ds)


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    configure_logging(args.logging_level)
    try:
        _dispatch(args)
    except (ConfigError, DataError, InfeasibleSpec, AnalysisError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(run_cli())
