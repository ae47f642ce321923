"""Baselines and the four recovery-milestone detectors."""

from __future__ import annotations

import concurrent.futures
import datetime as dt
import functools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import polars as pl

from .ingest import CATEGORIES, Dataset
from .model import MilestoneKind, MilestoneSet, StudyConfig, UnitId, weeks_since_landfall

logger = logging.getLogger(__name__)

ABSOLUTE_TOLERANCE = "absolute_tolerance"
PERCENT_CHANGE = "percent_change"


class Reason(str, Enum):
    RECOVERED = "recovered"
    NEVER_MET = "never_met"
    DEADLINE_PASSED = "deadline_passed"
    UNDEFINED_BASELINE = "undefined_baseline"


@dataclass(frozen=True)
class DetectionOutcome:
    unit: UnitId
    kind: MilestoneKind
    time: Optional[float]
    reason: Reason
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if (self.time is not None) != (self.reason is Reason.RECOVERED):
            raise ValueError("time must be present exactly when the milestone is recovered")


@dataclass(frozen=True)
class DailySeries:
    """Consecutive days starting at ``start``; NaN marks an undefined value."""

    start: dt.date
    values: np.ndarray
    imputed: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def of(cls, start: dt.date, values: Sequence[float], imputed: Optional[Sequence[bool]] = None) -> DailySeries:
        array = np.asarray(values, dtype=np.float64)
        flags = np.zeros(len(array), dtype=bool) if imputed is None else np.asarray(imputed, dtype=bool)
        return cls(start, array, flags)


@dataclass(frozen=True)
class WeeklySeries:
    """Weekly rates; ``values[i]`` belongs to week ``first_week + i`` after landfall."""

    first_week: int
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def of(cls, first_week: int, values: Sequence[Optional[float]]) -> WeeklySeries:
        array = np.array([np.nan if value is None else value for value in values], dtype=np.float64)
        return cls(first_week, array)


@dataclass(frozen=True)
class BaselineSet:
    visits: Mapping[tuple[str, str], float]
    evac: Mapping[str, tuple[Optional[float], ...]]
    evac_overall: Mapping[str, float]
    moveout: Mapping[str, float]

    def visit(self, unit: str, category: str) -> Optional[float]:
        return self.visits.get((unit, category))

    def evac_weekdays(self, unit: str) -> Optional[tuple[Optional[float], ...]]:
        return self.evac.get(unit)


@dataclass(frozen=True)
class MilestoneTable:
    milestones: Mapping[UnitId, MilestoneSet]
    outcomes: tuple[DetectionOutcome, ...]

    @property
    def units(self) -> list[UnitId]:
        return sorted(self.milestones)

    @functools.cached_property
    def _by_key(self) -> dict[tuple[str, MilestoneKind], DetectionOutcome]:
        return {(outcome.unit, outcome.kind): outcome for outcome in self.outcomes}

    def outcome(self, unit: str, kind: MilestoneKind) -> Optional[DetectionOutcome]:
        return self._by_key.get((unit, kind))


def _in_window(column: str, window: tuple[dt.date, dt.date]) -> pl.Expr:
    return pl.col(column).is_between(window[0], window[1], closed="both")


def compute_baselines(ds: Dataset, cfg: StudyConfig) -> BaselineSet:
    visits = (
        ds.visits.filter(_in_window("date", cfg.visit_window))
        .group_by(["unit", "category"])
        .agg(pl.col("visits").mean().alias("baseline"))
    )
    visit_baselines = {
        (row["unit"], row["category"]): float(row["baseline"]) for row in visits.iter_rows(named=True)
    }

    evac_window = ds.evac.filter(_in_window("date", cfg.evac_baseline_window) & pl.col("rate").is_not_null())
    by_weekday = evac_window.group_by(["unit", pl.col("date").dt.weekday().alias("weekday")]).agg(
        pl.col("rate").mean().alias("baseline")
    )
    weekdays: dict[str, list[Optional[float]]] = {}
    for row in by_weekday.iter_rows(named=True):
        weekdays.setdefault(row["unit"], [None] * 7)[row["weekday"] - 1] = float(row["baseline"])
    overall = evac_window.group_by("unit").agg(pl.col("rate").mean().alias("baseline"))
    evac_overall = {row["unit"]: float(row["baseline"]) for row in overall.iter_rows(named=True)}

    moveout = (
        ds.moveout.filter(_in_window("week_start", cfg.moveout_baseline_window) & pl.col("rate").is_not_null())
        .group_by("unit")
        .agg(pl.col("rate").mean().alias("baseline"))
    )
    moveout_baselines = {row["unit"]: float(row["baseline"]) for row in moveout.iter_rows(named=True)}

    for unit in ds.roster:
        missing = [category for category in CATEGORIES if (unit, category) not in visit_baselines]
        if missing:
            logger.warning("EmptyWindow: no visit baseline data for %s (%s)", unit, ", ".join(missing))
        if unit not in weekdays:
            logger.warning("EmptyWindow: no evacuation baseline data for %s", unit)
        elif None in weekdays[unit]:
            logger.warning("EmptyWindow: evacuation baseline for %s misses some weekdays", unit)
        if unit not in moveout_baselines:
            logger.warning("EmptyWindow: no move-out baseline data for %s", unit)

    return BaselineSet(
        visits=visit_baselines,
        evac={unit: tuple(values) for unit, values in weekdays.items()},
        evac_overall=evac_overall,
        moveout=moveout_baselines,
    )


def first_run(ok: np.ndarray, run: int) -> Optional[int]:
    """Index of the first position where ``run`` consecutive entries are true."""
    if run < 1 or len(ok) < run:
        return None
    windows = np.convolve(ok.astype(np.int64), np.ones(run, dtype=np.int64), mode="valid")
    hits = np.flatnonzero(windows == run)
    return int(hits[0]) if hits.size else None


def _day_weeks(start: dt.date, offset: int, cfg: StudyConfig) -> float:
    return float(weeks_since_landfall(start + dt.timedelta(days=offset), cfg))


def detect_activity_recovery(
    series: DailySeries,
    baseline: Optional[float],
    cfg: StudyConfig,
    unit: UnitId = UnitId(""),
    kind: MilestoneKind = MilestoneKind.ESSENTIAL,
) -> DetectionOutcome:
    if baseline is None:
        return DetectionOutcome(unit, kind, None, Reason.UNDEFINED_BASELINE)
    if baseline == 0 and (len(series) == 0 or series.imputed.all()):
        return DetectionOutcome(unit, kind, None, Reason.UNDEFINED_BASELINE)

    ok = series.values >= cfg.activity_threshold * baseline
    index = first_run(ok, cfg.activity_run_days)
    if index is None:
        return DetectionOutcome(unit, kind, None, Reason.NEVER_MET)
    return DetectionOutcome(unit, kind, _day_weeks(series.start, index, cfg), Reason.RECOVERED)


def _percent_change(values: np.ndarray, baseline: np.ndarray) -> np.ndarray:
    return 100.0 * (values - baseline) / baseline


def _steady_pairs(pct: np.ndarray, tolerance: float) -> np.ndarray:
    """``ok[i]`` is true when the change from position i-1 to i is within tolerance."""
    ok = np.zeros(len(pct), dtype=bool)
    if len(pct) > 1:
        with np.errstate(invalid="ignore"):
            ok[1:] = np.abs(np.diff(pct)) <= tolerance
    return ok


def detect_evacuation_recovery(
    series: DailySeries,
    baselines: Optional[Sequence[Optional[float]]],
    cfg: StudyConfig,
    unit: UnitId = UnitId(""),
    overall_baseline: Optional[float] = None,
) -> DetectionOutcome:
    """First day of a run of near-baseline evacuation rates, before the deadline.

    ``baselines`` holds one value per weekday, Monday first.
    """
    kind = MilestoneKind.EVACUATION
    if baselines is None or len(baselines) != 7 or any(value is None for value in baselines):
        return DetectionOutcome(unit, kind, None, Reason.UNDEFINED_BASELINE)

    weekday_baselines = np.asarray(baselines, dtype=np.float64)
    weekday_index = (series.start.weekday() + np.arange(len(series))) % 7
    expected = weekday_baselines[weekday_index]
    rates = series.values
    flags: tuple[str, ...] = ()

    with np.errstate(divide="ignore", invalid="ignore"):
        if cfg.evac_deviation_mode == PERCENT_CHANGE:
            flags = (PERCENT_CHANGE,)
            if np.any(weekday_baselines == 0):
                return DetectionOutcome(unit, kind, None, Reason.UNDEFINED_BASELINE, flags)
            ok = _steady_pairs(_percent_change(rates, expected), 100.0 * cfg.evac_tolerance)
        else:
            zero = expected == 0
            ok = np.abs(rates - expected) / expected <= cfg.evac_tolerance
            if zero.any():
                if overall_baseline is None:
                    return DetectionOutcome(unit, kind, None, Reason.UNDEFINED_BASELINE)
                flags = (ABSOLUTE_TOLERANCE,)
                logger.warning(
                    "Zero weekday evacuation baseline for %s; using absolute tolerance %.6f",
                    unit or "<series>",
                    cfg.evac_tolerance * overall_baseline,
                )
                ok = np.where(zero, np.abs(rates) <= cfg.evac_tolerance * overall_baseline, ok)
    ok = np.nan_to_num(ok, nan=0).astype(bool) & ~np.isnan(rates)

    index = first_run(ok, cfg.evac_run_days)
    if index is None:
        return DetectionOutcome(unit, kind, None, Reason.NEVER_MET, flags)
    if series.start + dt.timedelta(days=index) >= cfg.evac_deadline:
        return DetectionOutcome(unit, kind, None, Reason.DEADLINE_PASSED, flags)
    return DetectionOutcome(unit, kind, _day_weeks(series.start, index, cfg), Reason.RECOVERED, flags)


def detect_moveout_recovery(
    series: WeeklySeries,
    baseline: Optional[float],
    cfg: StudyConfig,
    unit: UnitId = UnitId(""),
) -> DetectionOutcome:
    """First week from week 0 on whose percent change stays within tolerance of the previous week's.

    Pre-landfall weeks only act as predecessors.
    """
    kind = MilestoneKind.MOVEOUT
    if baseline is None or baseline <= 0:
        return DetectionOutcome(unit, kind, None, Reason.UNDEFINED_BASELINE)

    pct = _percent_change(series.values, np.full(len(series), baseline))
    ok = _steady_pairs(pct, cfg.steady_state_tolerance)
    ok[series.first_week + np.arange(len(series)) < 0] = False
    index = first_run(ok, cfg.steady_state_run_weeks)
    if index is None:
        return DetectionOutcome(unit, kind, None, Reason.NEVER_MET)
    return DetectionOutcome(unit, kind, float(series.first_week + index), Reason.RECOVERED)


def week_number(week_start: dt.date, cfg: StudyConfig) -> int:
    """Whole weeks after landfall; the grid week containing landfall is week 0."""
    return -((cfg.landfall_date - week_start).days // 7)


@dataclass(frozen=True)
class _UnitSeries:
    visits: dict[str, DailySeries]
    evac: DailySeries
    moveout: WeeklySeries


def _empty_daily(cfg: StudyConfig) -> DailySeries:
    return DailySeries.of(cfg.landfall_date, [])


def _unit_series(ds: Dataset, cfg: StudyConfig) -> dict[str, _UnitSeries]:
    landfall = cfg.landfall_date
    visits: dict[tuple[str, str], DailySeries] = {}
    post_visits = ds.visits.filter(pl.col("date") >= landfall).sort(["unit", "category", "date"])
    for part in post_visits.partition_by(["unit", "category"], maintain_order=True):
        key = (part["unit"][0], part["category"][0])
        visits[key] = DailySeries(
            part["date"][0], part["visits"].to_numpy().astype(np.float64), part["imputed"].to_numpy()
        )

    evac: dict[str, DailySeries] = {}
    post_evac = ds.evac.filter(pl.col("date") >= landfall).sort(["unit", "date"])
    for part in post_evac.partition_by("unit", maintain_order=True):
        rates = part["rate"].fill_null(np.nan).to_numpy().astype(np.float64)
        evac[part["unit"][0]] = DailySeries(part["date"][0], rates, part["imputed"].to_numpy())

    moveout: dict[str, WeeklySeries] = {}
    weeks = ds.moveout.with_columns(
        (-((pl.lit(landfall) - pl.col("week_start")).dt.total_days() // 7)).alias("week")
    ).filter(pl.col("week") >= -1)
    for part in weeks.sort(["unit", "week"]).partition_by("unit", maintain_order=True):
        rates = part["rate"].fill_null(np.nan).to_numpy().astype(np.float64)
        moveout[part["unit"][0]] = WeeklySeries(int(part["week"][0]), rates)

    return {
        unit: _UnitSeries(
            visits={
                category: visits.get((unit, category), _empty_daily(cfg)) for category in CATEGORIES
            },
            evac=evac.get(unit, _empty_daily(cfg)),
            moveout=moveout.get(unit, WeeklySeries.of(0, [])),
        )
        for unit in ds.roster
    }


def _detect_unit(
    unit: UnitId, series: _UnitSeries, baselines: BaselineSet, cfg: StudyConfig
) -> tuple[DetectionOutcome, ...]:
    return (
        detect_evacuation_recovery(
            series.evac,
            baselines.evac_weekdays(unit),
            cfg,
            unit,
            overall_baseline=baselines.evac_overall.get(unit),
        ),
        detect_activity_recovery(
            series.visits["essential"], baselines.visit(unit, "essential"), cfg, unit, MilestoneKind.ESSENTIAL
        ),
        detect_activity_recovery(
            series.visits["nonessential"],
            baselines.visit(unit, "nonessential"),
            cfg,
            unit,
            MilestoneKind.NONESSENTIAL,
        ),
        detect_moveout_recovery(series.moveout, baselines.moveout.get(unit), cfg, unit),
    )


def compute_milestones(ds: Dataset, cfg: StudyConfig, threads: int = 1) -> MilestoneTable:
    baselines = compute_baselines(ds, cfg)
    per_unit = _unit_series(ds, cfg)
    units = sorted(per_unit)

    def detect(unit: str) -> tuple[DetectionOutcome, ...]:
        return _detect_unit(UnitId(unit), per_unit[unit], baselines, cfg)

    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(detect, units))
    else:
        results = [detect(unit) for unit in units]

    milestones: dict[UnitId, MilestoneSet] = {}
    outcomes: list[DetectionOutcome] = []
    for unit, unit_outcomes in zip(units, results):
        milestones[UnitId(unit)] = MilestoneSet.from_mapping({o.kind: o.time for o in unit_outcomes})
        outcomes.extend(unit_outcomes)

    censored = sum(1 for outcome in outcomes if outcome.time is None)
    logger.info("Detected milestones for %d units (%d censored milestones)", len(units), censored)
    return MilestoneTable(milestones, tuple(outcomes))


MILESTONE_COLUMNS = ["unit"] + [f"{kind.column}_weeks" for kind in MilestoneKind] + [
    f"{kind.column}_reason" for kind in MilestoneKind
]


def format_float(value: Optional[float]) -> Optional[str]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return repr(float(value))


def write_milestones(path: Path | str, table: MilestoneTable) -> None:
    rows: dict[str, list[Optional[str]]] = {column: [] for column in MILESTONE_COLUMNS}
    for unit in table.units:
        rows["unit"].append(unit)
        for kind in MilestoneKind:
            outcome = table.outcome(unit, kind)
            rows[f"{kind.column}_weeks"].append(format_float(table.milestones[unit].get(kind)))
            rows[f"{kind.column}_reason"].append(outcome.reason.value if outcome else None)
    pl.DataFrame(rows, schema={column: pl.String for column in MILESTONE_COLUMNS}).write_csv(path)
    logger.info("Wrote %s", path)


def read_milestones(path: Path | str) -> MilestoneTable:
    frame = pl.read_csv(path, infer_schema=False)
    milestones: dict[UnitId, MilestoneSet] = {}
    outcomes: list[DetectionOutcome] = []
    for row in frame.iter_rows(named=True):
        unit = UnitId(row["unit"])
        times: dict[MilestoneKind, Optional[float]] = {}
        for kind in MilestoneKind:
            raw = row[f"{kind.column}_weeks"]
            times[kind] = None if raw is None else float(raw)
            reason = row[f"{kind.column}_reason"]
            if reason is not None:
                outcomes.append(DetectionOutcome(unit, kind, times[kind], Reason(reason)))
        milestones[unit] = MilestoneSet.from_mapping(times)
    return MilestoneTable(milestones, tuple(outcomes))


def outcome_counts(outcomes: Iterable[DetectionOutcome]) -> dict[str, dict[str, int]]:
    counts: dict[str, dict[str, int]] = {kind.value: {reason.value: 0 for reason in Reason} for kind in MilestoneKind}
    for outcome in outcomes:
        counts[outcome.kind.value][outcome.reason.value] += 1
    return counts
