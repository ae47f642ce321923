"""Report bundle: run the whole analysis and write tables, JSON and charts."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np
import polars as pl

from . import __version__, charts
from .errors import TooFewObservations
from .ingest import Dataset
from .milestones import MilestoneTable, compute_milestones, outcome_counts, write_milestones
from .model import MilestoneKind, SequenceLabel, StudyConfig, UnitId, config_hash
from .synth import GROUND_TRUTH_FILE
from .trajectory import (
    LAG_NAMES,
    REGRESSIONS,
    CorrelationMatrix,
    DistributionRow,
    LagSummary,
    RegressionRow,
    SequenceAssignment,
    SequenceStats,
    assign_sequences,
    correlations,
    lag_summary,
    regression_table,
    sequence_distribution,
    sequence_stats,
    write_sequences,
)
from .vulnerability import (
    GROUPS,
    CrosstabPanel,
    DisparityTable,
    VulnerabilityProfile,
    income_by_pde_quantile,
    income_by_sequence,
    lag_percent_change,
    sequence_by_quantile,
    unit_profiles,
    write_vulnerability,
)

logger = logging.getLogger(__name__)

MILESTONES_CSV = "milestones.csv"
SEQUENCES_CSV = "sequences.csv"
DISTRIBUTION_CSV = "distribution.csv"
STATS_CSV = "sequence_stats.csv"
REGRESSION_JSON = "regression.json"
CORRELATIONS_JSON = "correlations.json"
CROSSTAB_JSON = "crosstab.json"
DISPARITY_JSON = "disparity.json"
VULNERABILITY_CSV = "vulnerability.csv"
LAGS_JSON = "lags.json"
METADATA_JSON = "metadata.json"

REPORT_FILES = (
    MILESTONES_CSV,
    SEQUENCES_CSV,
    DISTRIBUTION_CSV,
    STATS_CSV,
    REGRESSION_JSON,
    CORRELATIONS_JSON,
    CROSSTAB_JSON,
    DISPARITY_JSON,
    VULNERABILITY_CSV,
    LAGS_JSON,
    METADATA_JSON,
)
CHART_FILES = ("distribution.svg", "lags.svg", "regression.svg", "crosstab.svg", "disparity.svg")


@dataclass(frozen=True)
class ReportBundle:
    milestones: MilestoneTable
    assignments: Sequence[SequenceAssignment]
    distribution: Sequence[DistributionRow]
    stats: Sequence[SequenceStats]
    regression: Sequence[RegressionRow]
    correlations: Optional[CorrelationMatrix]
    crosstab: Sequence[CrosstabPanel]
    disparity: DisparityTable
    income_by_sequence: Mapping[str, Any]
    income_by_pde_quantile: Mapping[str, Any]
    profiles: Mapping[UnitId, VulnerabilityProfile]
    lags: Sequence[LagSummary]
    metadata: Mapping[str, Any]


def _plain(value: Any) -> Any:
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, np.generic):
        return _plain(value.item())
    if isinstance(value, Mapping):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


def dump_json(payload: Any) -> str:
    return json.dumps(_plain(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: Path | str, payload: Any) -> None:
    Path(path).write_text(dump_json(payload), encoding="utf-8")
    logger.info("Wrote %s", path)


def read_seed(data_dir: Path | str) -> Optional[int]:
    path = Path(data_dir) / GROUND_TRUTH_FILE
    if not path.is_file():
        return None
    with path.open("r", encoding="utf-8") as file:
        return json.load(file).get("seed")


def build_metadata(cfg: StudyConfig, units: int, seed: Optional[int]) -> dict[str, Any]:
    return {
        "tool": "recovera",
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "units": units,
        "lag_mode": cfg.lag_mode,
        "normalize_lags": cfg.normalize_lags,
    }


def build_report(ds: Dataset, cfg: StudyConfig, threads: int = 1, seed: Optional[int] = None) -> ReportBundle:
    table = compute_milestones(ds, cfg, threads)
    assignments = assign_sequences(table.milestones, cfg.lag_mode)
    profiles = unit_profiles(ds, cfg)
    k = cfg.income_quantile_count

    try:
        matrix: Optional[CorrelationMatrix] = correlations(assignments, profiles, cfg.correlation_method)
    except TooFewObservations as exc:
        logger.warning("Correlations skipped: %s", exc)
        matrix = None

    return ReportBundle(
        milestones=table,
        assignments=assignments,
        distribution=sequence_distribution(assignments) if assignments else [],
        stats=sequence_stats(assignments, table.milestones),
        regression=regression_table(assignments, cfg, threads=threads),
        correlations=matrix,
        crosstab=sequence_by_quantile(assignments, profiles, k),
        disparity=lag_percent_change(assignments, profiles, k),
        income_by_sequence=income_by_sequence(assignments, profiles, k),
        income_by_pde_quantile=income_by_pde_quantile(profiles, k),
        profiles=profiles,
        lags=lag_summary(assignments),
        metadata=build_metadata(cfg, len(ds.roster), seed),
    )


def _fixed(value: Optional[float]) -> Optional[str]:
    return None if value is None else f"{value:.2f}"


DISTRIBUTION_COLUMNS = ["label", "description", "count", "frequency"]


def write_distribution(path: Path | str, rows: Sequence[DistributionRow]) -> None:
    frame = pl.DataFrame(
        {
            "label": [row.label.value for row in rows],
            "description": [row.label.description for row in rows],
            "count": [row.count for row in rows],
            "frequency": [_fixed(row.percent) for row in rows],
        },
        schema={"label": pl.String, "description": pl.String, "count": pl.Int64, "frequency": pl.String},
    )
    frame.write_csv(path)
    logger.info("Wrote %s", path)


def read_distribution(path: Path | str) -> pl.DataFrame:
    return pl.read_csv(path, infer_schema=False).with_columns(
        pl.col("count").cast(pl.Int64), pl.col("frequency").cast(pl.Float64)
    )


def _stats_columns() -> list[str]:
    columns = ["label", "count", "frequency"]
    for kind in MilestoneKind:
        columns += [f"{kind.column}_mean", f"{kind.column}_sd"]
    return columns + ["mean_max_duration", "rank", "note"]


STATS_COLUMNS = _stats_columns()


def write_sequence_stats(path: Path | str, stats: Sequence[SequenceStats]) -> None:
    rows: dict[str, list[Optional[str]]] = {column: [] for column in STATS_COLUMNS}
    for row in stats:
        rows["label"].append(row.label.value)
        rows["count"].append(str(row.count))
        rows["frequency"].append(_fixed(row.frequency))
        for kind in MilestoneKind:
            rows[f"{kind.column}_mean"].append(_fixed(row.means[kind]))
            rows[f"{kind.column}_sd"].append(_fixed(row.sds[kind]))
        rows["mean_max_duration"].append(_fixed(row.mean_max_duration))
        rows["rank"].append(None if row.rank is None else str(row.rank))
        rows["note"].append(row.note)
    pl.DataFrame(rows, schema={column: pl.String for column in STATS_COLUMNS}).write_csv(path)
    logger.info("Wrote %s", path)


def read_sequence_stats(path: Path | str) -> pl.DataFrame:
    frame = pl.read_csv(path, infer_schema=False)
    numeric = [c for c in STATS_COLUMNS if c not in ("label", "count", "rank", "note")]
    return frame.with_columns(
        pl.col("count").cast(pl.Int64),
        pl.col("rank").cast(pl.Int64),
        *[pl.col(column).cast(pl.Float64) for column in numeric],
    )


def regression_payload(rows: Sequence[RegressionRow]) -> dict[str, Any]:
    return {row.label.value: row.to_dict() for row in rows}


def crosstab_payload(panels: Sequence[CrosstabPanel]) -> dict[str, Any]:
    return {"panels": [panel.to_dict() for panel in panels]}


def disparity_payload(
    table: DisparityTable, incomes: Mapping[str, Any], pde_incomes: Mapping[str, Any]
) -> dict[str, Any]:
    return {
        "percent_change": table.to_dict(),
        "income_by_sequence": dict(incomes),
        "income_by_pde_quantile": dict(pde_incomes),
    }


def lags_payload(summaries: Sequence[LagSummary]) -> dict[str, Any]:
    return {summary.label.value: summary.to_dict() for summary in summaries}


def _draw_charts(bundle: ReportBundle, out_dir: Path) -> None:
    charts.bar_chart(
        out_dir / "distribution.svg",
        "Sequence frequency (%)",
        [row.label.value for row in bundle.distribution],
        {"frequency": [row.percent for row in bundle.distribution]},
        y_label="%",
    )
    charts.bar_chart(
        out_dir / "lags.svg",
        "Mean lag per sequence (weeks)",
        [summary.label.value for summary in bundle.lags],
        {name: [summary.means[index] for summary in bundle.lags] for index, name in enumerate(LAG_NAMES)},
        y_label="weeks",
    )

    groups: dict[str, tuple[list[float], list[float]]] = {}
    for assignment in bundle.assignments:
        if assignment.lags is not None:
            xs, ys = groups.setdefault(assignment.label.value, ([], []))
            xs.append(assignment.lags.lag1)
            ys.append(assignment.lags.lag2)
    lines = {}
    for row in bundle.regression:
        fit = row.cells["lag2_on_lag1"].fit
        if fit is not None and not bundle.metadata.get("normalize_lags"):
            lines[row.label.value] = (fit.beta0, fit.beta1)
    charts.scatter_chart(
        out_dir / "regression.svg",
        "Lag 2 against lag 1",
        dict(sorted(groups.items())),
        lines,
        x_label="lag1 (weeks)",
        y_label="lag2",
    )

    categories, series = [], {label.value: [] for label in SequenceLabel}
    for panel in bundle.crosstab:
        width = len(next(iter(panel.counts.values())))
        for quantile in range(width):
            categories.append(f"P{panel.pde_quantile}/I{quantile + 1}")
            for label in SequenceLabel:
                series[label.value].append(float(panel.counts[label][quantile]))
    charts.bar_chart(out_dir / "crosstab.svg", "Sequences by PDE and income class", categories, series, "units")

    labels = [label.value for label in SequenceLabel.canonical()]
    categories = [f"{label} {lag}" for label in labels for lag in LAG_NAMES]
    changes = bundle.disparity.changes
    charts.bar_chart(
        out_dir / "disparity.svg",
        "Lag change by income group (%)",
        categories,
        {group: [changes[label][lag][group] for label in labels for lag in LAG_NAMES] for group in GROUPS},
        y_label="%",
    )


def write_bundle(bundle: ReportBundle, out_dir: Path | str) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    write_milestones(out_dir / MILESTONES_CSV, bundle.milestones)
    write_sequences(out_dir / SEQUENCES_CSV, bundle.assignments)
    write_distribution(out_dir / DISTRIBUTION_CSV, bundle.distribution)
    write_sequence_stats(out_dir / STATS_CSV, bundle.stats)
    write_json(out_dir / REGRESSION_JSON, regression_payload(bundle.regression))
    write_json(
        out_dir / CORRELATIONS_JSON,
        bundle.correlations.to_dict() if bundle.correlations else {"note": TooFewObservations.__name__},
    )
    write_json(out_dir / CROSSTAB_JSON, crosstab_payload(bundle.crosstab))
    write_json(
        out_dir / DISPARITY_JSON,
        disparity_payload(bundle.disparity, bundle.income_by_sequence, bundle.income_by_pde_quantile),
    )
    write_vulnerability(out_dir / VULNERABILITY_CSV, bundle.profiles)
    write_json(out_dir / LAGS_JSON, lags_payload(bundle.lags))
    write_json(
        out_dir / METADATA_JSON,
        {**bundle.metadata, "outcomes": outcome_counts(bundle.milestones.outcomes)},
    )
    _draw_charts(bundle, out_dir)
    return [out_dir / name for name in REPORT_FILES + CHART_FILES]


__all__ = [
    "CHART_FILES",
    "REGRESSIONS",
    "REPORT_FILES",
    "ReportBundle",
    "build_report",
    "write_bundle",
]
