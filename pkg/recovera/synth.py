"""Seeded synthetic scenarios with planted milestones, plus brute-force oracles.

Lags are planted first and milestone days derived from them, so the
regression ground truth is exact. Every series is built so the planted day is
the first one meeting its criterion: values before it always fail.
"""

from __future__ import annotations

import datetime as dt
import itertools
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence, TypeVar

import numpy as np
import polars as pl

from .errors import ConfigError, ConfigIssue, ConstantRegressor, InfeasibleSpec
from .ingest import CLAIMS_FILE, COLUMNS, EVAC_FILE, HOMETAGS_FILE, INCOME_FILE, VISITS_FILE
from .model import (
    SEQUENCE_ORDERS,
    MilestoneKind,
    MilestoneSet,
    SequenceLabel,
    StudyConfig,
    UnitId,
    config_from_dict,
    config_to_dict,
    read_document,
)
from .trajectory import LagTriple, compute_lags, order_milestones

logger = logging.getLogger(__name__)

GROUND_TRUTH_FILE = "ground_truth.json"

DEFAULT_WEIGHTS = {
    "Seq1": 183.0,
    "Seq2": 150.0,
    "Seq3": 141.0,
    "Seq4": 133.0,
    "Seq5": 77.0,
    "Seq6": 72.0,
    "Other": 30.0,
}

# (lag2 on lag1, lag3 on lag2)
DEFAULT_SLOPES = {
    "Seq1": (0.732, 0.496),
    "Seq2": (0.760, 0.402),
    "Seq3": (0.464, 0.600),
    "Seq4": (0.601, 0.557),
    "Seq5": (0.473, 0.728),
    "Seq6": (0.379, 0.668),
}

_GAP_WEEKS = 1.2
_MAX_REDRAWS = 100

_E, _S, _N, _M = (
    MilestoneKind.EVACUATION,
    MilestoneKind.ESSENTIAL,
    MilestoneKind.NONESSENTIAL,
    MilestoneKind.MOVEOUT,
)
_OTHER_ORDERS = [order for order in itertools.permutations(MilestoneKind) if order[0] is not _E]


@dataclass(frozen=True)
class LagModel:
    b0: float
    b1: float
    c0: float
    c1: float

    def to_dict(self) -> dict[str, float]:
        return {"b0": self.b0, "b1": self.b1, "c0": self.c0, "c1": self.c1}


@dataclass(frozen=True)
class ScenarioSpec:
    unit_count: int = 100
    seed: int = 0
    horizon_weeks: int = 16
    sequence_weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    slopes: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_SLOPES))
    lag1_range: tuple[float, float] = (0.5, 3.0)
    lag_noise: float = 0.0
    outlier_fraction: float = 0.0
    outlier_shift: float = 5.0
    visit_baseline_range: tuple[int, int] = (1000, 3000)
    visit_noise: str = "none"
    rate_noise: float = 0.0
    evac_users: int = 200
    residents_per_unit: int = 20
    tag_dropout: float = 0.0
    income_mean: float = 60_000.0
    income_sd: float = 20_000.0
    income_lag_correlation: float = -0.5
    claims_per_unit: float = 3.0
    nfip_share: float = 0.6
    dual_claim_fraction: float = 0.1
    split_claim_fraction: float = 0.1
    claim_free_fraction: float = 0.1
    vulnerable: Optional[Mapping[str, Any]] = None
    study: StudyConfig = field(default_factory=StudyConfig)


def _issues(spec: ScenarioSpec) -> list[str]:
    problems = []
    if spec.unit_count < 4:
        problems.append("unit_count must be >= 4")
    if spec.horizon_weeks < 2:
        problems.append("horizon_weeks must be >= 2")
    if not 0.0 <= spec.outlier_fraction <= 0.5:
        problems.append(f"outlier_fraction must be in [0, 0.5], got {spec.outlier_fraction}")
    if not 0.0 <= spec.tag_dropout < 1.0:
        problems.append("tag_dropout must be in [0, 1)")
    if spec.visit_noise not in ("none", "poisson"):
        problems.append("visit_noise must be 'none' or 'poisson'")
    low, high = spec.lag1_range
    if not 0 < low <= high:
        problems.append("lag1_range must satisfy 0 < low <= high")
    if spec.visit_baseline_range[0] < 10 or spec.visit_baseline_range[0] > spec.visit_baseline_range[1]:
        problems.append("visit_baseline_range must be an increasing pair starting at >= 10")
    if spec.evac_users < 100:
        problems.append("evac_users must be >= 100")
    if spec.residents_per_unit < 8:
        problems.append("residents_per_unit must be >= 8")
    if not -1.0 <= spec.income_lag_correlation <= 1.0:
        problems.append("income_lag_correlation must be in [-1, 1]")
    for name in ("lag_noise", "rate_noise", "income_sd", "claims_per_unit"):
        if getattr(spec, name) < 0:
            problems.append(f"{name} must be >= 0")
    for name in ("nfip_share", "dual_claim_fraction", "split_claim_fraction", "claim_free_fraction"):
        if not 0.0 <= getattr(spec, name) <= 1.0:
            problems.append(f"{name} must be in [0, 1]")

    labels = {label.value for label in SequenceLabel}
    weights = spec.sequence_weights
    if set(weights) - labels or any(w < 0 for w in weights.values()) or sum(weights.values()) <= 0:
        problems.append("sequence_weights must map sequence labels to non-negative weights with a positive sum")
    if {label.value for label in SequenceLabel.canonical()} - set(spec.slopes):
        problems.append("slopes must cover Seq1..Seq6")
    elif any(b <= 0 or c <= 0 for b, c in spec.slopes.values()):
        problems.append("slopes must be positive")
    if spec.vulnerable is not None:
        label = spec.vulnerable.get("label")
        fraction = spec.vulnerable.get("fraction", 0.0)
        if label not in labels or label == SequenceLabel.OTHER.value or not 0.0 < fraction <= 0.5:
            problems.append("vulnerable needs a Seq label and a fraction in (0, 0.5]")
    return problems


def validate_scenario(spec: ScenarioSpec) -> ScenarioSpec:
    problems = _issues(spec)
    if problems:
        raise InfeasibleSpec("; ".join(problems))
    return spec


_PAIRS = ("lag1_range", "visit_baseline_range")


def scenario_from_dict(payload: Mapping[str, Any]) -> ScenarioSpec:
    known = {f.name for f in fields(ScenarioSpec)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError([ConfigIssue("UnknownKey", f"unknown scenario keys: {', '.join(unknown)}")])

    values: dict[str, Any] = {}
    for name, value in payload.items():
        if name == "study":
            values[name] = config_from_dict(value or {})
        elif name in _PAIRS:
            values[name] = tuple(value)
        elif name == "slopes":
            values[name] = {**DEFAULT_SLOPES, **{label: tuple(pair) for label, pair in value.items()}}
        else:
            values[name] = value
    return validate_scenario(ScenarioSpec(**values))


def load_scenario(path: Path | str) -> ScenarioSpec:
    return scenario_from_dict(read_document(Path(path)))


def scenario_to_dict(spec: ScenarioSpec) -> dict[str, Any]:
    payload: dict[str, Any] = {}
    for item in fields(ScenarioSpec):
        value = getattr(spec, item.name)
        if item.name == "study":
            value = config_to_dict(value)
        elif isinstance(value, tuple):
            value = list(value)
        elif item.name == "slopes":
            value = {label: list(pair) for label, pair in value.items()}
        elif isinstance(value, Mapping):
            value = dict(value)
        payload[item.name] = value
    return payload


@dataclass(frozen=True)
class UnitTruth:
    label: SequenceLabel
    days: Mapping[MilestoneKind, int]
    moveout_week: int
    milestones: MilestoneSet
    lags: Optional[LagTriple]
    outlier: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label.value,
            **{kind.value: self.milestones.get(kind) for kind in MilestoneKind},
            "days": {kind.value: day for kind, day in self.days.items()},
            "lags": list(self.lags.values) if self.lags else None,
            "outlier": self.outlier,
        }


@dataclass(frozen=True)
class GroundTruth:
    seed: int
    units: Mapping[UnitId, UnitTruth]
    lag_models: Mapping[str, LagModel]
    planted_correlation: float
    realized_correlation: Optional[float]

    @property
    def labels(self) -> dict[UnitId, SequenceLabel]:
        return {unit: truth.label for unit, truth in self.units.items()}

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "unit_count": len(self.units),
            "lag_models": {label: model.to_dict() for label, model in self.lag_models.items()},
            "income_lag1_correlation": {
                "planted": self.planted_correlation,
                "realized": self.realized_correlation,
            },
            "units": {unit: truth.to_dict() for unit, truth in sorted(self.units.items())},
        }


def load_ground_truth(path: Path | str) -> dict[str, Any]:
    with Path(path).open("r", encoding="utf-8") as file:
        return json.load(file)


@dataclass(frozen=True)
class Scenario:
    tables: Mapping[str, pl.DataFrame]
    truth: GroundTruth


def _unit_ids(count: int) -> list[UnitId]:
    width = max(4, len(str(count)))
    return [UnitId(f"U{index:0{width}d}") for index in range(1, count + 1)]


def _draw_labels(spec: ScenarioSpec, rng: np.random.Generator) -> list[SequenceLabel]:
    labels = [SequenceLabel(name) for name in sorted(spec.sequence_weights)]
    weights = np.array([spec.sequence_weights[label.value] for label in labels], dtype=np.float64)
    drawn = rng.choice(len(labels), size=spec.unit_count, p=weights / weights.sum())
    return [labels[index] for index in drawn]


@dataclass(frozen=True)
class LagLattice:
    """Integer-day lattice of planted lags for one sequence.

    Point ``j`` plants lag1 ``lag1_start + lag1_step * j`` and likewise for the
    other two lags, so clean lags sit exactly on two straight lines.
    """

    size: int
    lag1_start: int
    lag2_start: int
    lag3_start: int
    lag1_step: int
    lag2_step: int
    lag3_step: int

    @property
    def model(self) -> LagModel:
        b1 = self.lag2_step / self.lag1_step
        c1 = self.lag3_step / self.lag2_step
        return LagModel(
            b0=(self.lag2_start - b1 * self.lag1_start) / 7,
            b1=b1,
            c0=(self.lag3_start - c1 * self.lag2_start) / 7,
            c1=c1,
        )

    def point(self, index: int) -> tuple[int, int, int]:
        return (
            self.lag1_start + self.lag1_step * index,
            self.lag2_start + self.lag2_step * index,
            self.lag3_start + self.lag3_step * index,
        )


def _lag1_days(spec: ScenarioSpec) -> tuple[int, int]:
    low, high = spec.lag1_range
    lo = max(1, int(round(7 * low)))
    return lo, max(lo, int(round(7 * high)))


def _day_steps(b1: float, c1: float, span: int) -> Optional[tuple[int, int, int]]:
    """Integer day steps (s, t, u) with t/s closest to b1 and u/t closest to c1; ties keep the smaller s."""
    best: Optional[tuple[float, int, int, int]] = None
    for s in range(1, max(span, 1) + 1):
        t = int(round(b1 * s))
        if t < 1:
            continue
        for v in (d for d in range(1, t + 1) if t % d == 0):
            w = int(round(c1 * v))
            if w < 1:
                continue
            error = max(abs(t / s - b1), abs(w / v - c1))
            if best is None or error < best[0] - 1e-12:
                best = (error, s, t, w * (t // v))
    return None if best is None else best[1:]


def lag_lattice(spec: ScenarioSpec, label: SequenceLabel, rng: np.random.Generator) -> LagLattice:
    b1, c1 = spec.slopes[label.value]
    lo, hi = _lag1_days(spec)
    steps = _day_steps(b1, c1, hi - lo)
    if steps is None:
        raise InfeasibleSpec(f"slopes {b1}, {c1} of {label.value} do not fit a day grid; widen lag1_range")
    s, t, u = steps
    start = int(rng.integers(lo, max(lo, hi - s) + 1))
    size = (hi - start) // s + 1
    last = size - 1
    gap = math.ceil(7 * _GAP_WEEKS)
    lag2_start = start + gap + max(0, (s - t) * last)
    lag3_start = lag2_start + gap + max(0, (t - u) * last)
    lattice = LagLattice(size, start, lag2_start, lag3_start, s, t, u)
    model = lattice.model
    if abs(model.b1 - b1) > 1e-9 or abs(model.c1 - c1) > 1e-9:
        logger.info("%s slopes %.3f, %.3f planted as %.3f, %.3f", label.value, b1, c1, model.b1, model.c1)
    return lattice


def _planted_lag_days(
    spec: ScenarioSpec,
    label: SequenceLabel,
    lattice: Optional[LagLattice],
    outlier: bool,
    rng: np.random.Generator,
) -> tuple[int, int, int]:
    if lattice is None:
        lo, hi = _lag1_days(spec)
        lag1 = int(rng.integers(lo, hi + 1))
        lag2 = lag1 + 7 + int(rng.integers(0, 7))
        return lag1, lag2, lag2 + 7 + int(rng.integers(0, 7))

    lag1, clean2, clean3 = lattice.point(int(rng.integers(0, lattice.size)))
    if not spec.lag_noise and not outlier:
        return lag1, clean2, clean3
    c1 = lattice.lag3_step / lattice.lag2_step
    shift = 7 * spec.outlier_shift if outlier else 0.0
    for _ in range(_MAX_REDRAWS):
        noise2, noise3 = 7 * rng.normal(0.0, spec.lag_noise, size=2) if spec.lag_noise else (0.0, 0.0)
        noisy2 = clean2 + noise2
        # outliers move both tail milestones so the gap between them is kept
        lag2 = int(round(noisy2 + shift))
        lag3 = int(round(lattice.lag3_start + c1 * (noisy2 - lattice.lag2_start) + noise3 + shift))
        if 1 <= lag1 < lag2 < lag3:
            return lag1, lag2, lag3
    raise InfeasibleSpec(f"could not plant strictly increasing lags for {label.value}; lower lag_noise")


def _milestone_days(order: Sequence[MilestoneKind], cumulative: Sequence[int]) -> tuple[dict[MilestoneKind, int], int]:
    """Place the first milestone so that the move-out day falls on a whole week >= 1."""
    position = list(order).index(_M)
    start = (-cumulative[position]) % 7
    if start + cumulative[position] < 7:
        start += 7
    days = {kind: start + offset for kind, offset in zip(order, cumulative)}
    return days, days[_M] // 7


@dataclass(frozen=True)
class _Calendar:
    landfall: dt.date
    start: dt.date
    end: dt.date
    anchor: dt.date

    @property
    def days(self) -> list[dt.date]:
        return [self.start + dt.timedelta(days=i) for i in range((self.end - self.start).days + 1)]

    @property
    def weeks(self) -> list[dt.date]:
        count = (self.end - self.anchor).days // 7 + 1
        return [self.anchor + dt.timedelta(days=7 * i) for i in range(count)]

    def week_number(self, week_start: dt.date) -> int:
        return -((self.landfall - week_start).days // 7)


def _calendar(spec: ScenarioSpec) -> _Calendar:
    cfg = spec.study
    anchor = cfg.week_anchor or cfg.moveout_baseline_window[0]
    start = min(cfg.visit_window[0], cfg.evac_baseline_window[0], anchor)
    end = cfg.landfall_date + dt.timedelta(days=7 * spec.horizon_weeks - 1)
    return _Calendar(cfg.landfall_date, start, end, anchor)


def _check_horizon(unit: UnitId, truth: UnitTruth, spec: ScenarioSpec, calendar: _Calendar) -> None:
    cfg = spec.study
    horizon_days = 7 * spec.horizon_weeks
    last_week = calendar.week_number(calendar.weeks[-1])
    deadline_day = (cfg.evac_deadline - cfg.landfall_date).days
    problems = []
    for kind in (_S, _N):
        if truth.days[kind] + cfg.activity_run_days > horizon_days:
            problems.append(f"{kind.value} day {truth.days[kind]} leaves no room inside the horizon")
    if truth.days[_E] + cfg.evac_run_days > horizon_days or truth.days[_E] >= deadline_day:
        problems.append(f"evacuation day {truth.days[_E]} is beyond the horizon or the deadline")
    if truth.moveout_week + cfg.steady_state_run_weeks - 1 > last_week:
        problems.append(f"move-out week {truth.moveout_week} is beyond the horizon")
    if problems:
        raise InfeasibleSpec(f"{unit}: " + "; ".join(problems) + "; raise horizon_weeks")


def _plant_units(
    spec: ScenarioSpec, units: list[UnitId], rng: np.random.Generator
) -> tuple[dict[UnitId, UnitTruth], set[UnitId], dict[SequenceLabel, LagLattice]]:
    lattices = {label: lag_lattice(spec, label, rng) for label in SequenceLabel.canonical()}
    labels = _draw_labels(spec, rng)
    vulnerable: set[UnitId] = set()
    if spec.vulnerable is not None:
        count = max(1, int(round(spec.vulnerable["fraction"] * len(units))))
        chosen = rng.choice(len(units), size=count, replace=False)
        for index in sorted(int(i) for i in chosen):
            labels[index] = SequenceLabel(spec.vulnerable["label"])
            vulnerable.add(units[index])

    outliers = rng.random(len(units)) < spec.outlier_fraction
    planted = {}
    for unit, label, outlier in zip(units, labels, outliers):
        outlier = bool(outlier) and label.is_canonical
        lag_days = _planted_lag_days(spec, label, lattices.get(label), outlier, rng)
        if label.is_canonical:
            order = SEQUENCE_ORDERS[label]
        else:
            order = _OTHER_ORDERS[int(rng.integers(0, len(_OTHER_ORDERS)))]
        days, moveout_week = _milestone_days(order, (0, *lag_days))

        times = {kind: float(day) / 7 for kind, day in days.items()}
        times[_M] = float(moveout_week)
        milestones = MilestoneSet.from_mapping(times)
        lags = compute_lags(order_milestones(milestones)) if label.is_canonical else None
        planted[unit] = UnitTruth(label, days, moveout_week, milestones, lags, outlier)
    return planted, vulnerable, lattices


def _visit_rows(
    spec: ScenarioSpec, calendar: _Calendar, planted: Mapping[UnitId, UnitTruth], rng: np.random.Generator
) -> pl.DataFrame:
    cfg = spec.study
    days = calendar.days
    post_start = (calendar.landfall - calendar.start).days
    dates, units, categories, visits = [], [], [], []
    for unit, truth in planted.items():
        for kind, category in ((_S, "essential"), (_N, "nonessential")):
            baseline = int(rng.integers(spec.visit_baseline_range[0], spec.visit_baseline_range[1] + 1))
            ceiling = min(math.ceil(cfg.activity_threshold * baseline) - 1, round(0.75 * baseline))
            floor = round(0.2 * baseline)
            recovery = truth.days[kind]
            values = np.full(len(days), baseline, dtype=np.float64)
            for t in range(recovery):
                share = t / max(recovery - 1, 1)
                values[post_start + t] = round(floor + (ceiling - floor) * share)
            if spec.visit_noise == "poisson":
                values = rng.poisson(values).astype(np.float64)
            dates.extend(days)
            units.extend([unit] * len(days))
            categories.extend([category] * len(days))
            visits.extend(int(v) for v in values)
    frame = pl.DataFrame(
        {"date": dates, "unit": units, "category": categories, "visits": visits},
        schema={"date": pl.Date, "unit": pl.String, "category": pl.String, "visits": pl.Int64},
    )
    return frame.sort(["date", "unit", "category"])


def _evac_rows(
    spec: ScenarioSpec, calendar: _Calendar, planted: Mapping[UnitId, UnitTruth], rng: np.random.Generator
) -> pl.DataFrame:
    days = calendar.days
    weekdays = np.array([d.weekday() for d in days])
    post = np.array([(d - calendar.landfall).days for d in days])
    users = spec.evac_users
    dates, units, evacuees, totals = [], [], [], []
    for unit, truth in planted.items():
        base = int(rng.integers(5, 30))
        by_weekday = base + rng.integers(0, 6, size=7)
        counts = by_weekday[weekdays].astype(np.int64)
        disrupted = (post >= 0) & (post < truth.days[_E])
        counts = np.where(disrupted, np.minimum(users, 3 * counts + 5), counts)
        if spec.rate_noise:
            counts = counts + np.rint(rng.normal(0.0, spec.rate_noise * users, size=len(days))).astype(np.int64)
            counts = np.clip(counts, 0, users)
        dates.extend(days)
        units.extend([unit] * len(days))
        evacuees.extend(int(c) for c in counts)
        totals.extend([users] * len(days))
    frame = pl.DataFrame(
        {"date": dates, "unit": units, "evacuees": evacuees, "users": totals},
        schema={"date": pl.Date, "unit": pl.String, "evacuees": pl.Int64, "users": pl.Int64},
    )
    return frame.sort(["date", "unit"])


def _movers_per_week(truth: UnitTruth, week: int) -> int:
    """Movers per twenty residents in ``week``.

    One is the baseline. From week 0 until the week before recovery the count
    alternates between 3 and 1, then settles at 2, so the first steady pair
    ends on the move-out week and week 0 never pairs steadily with week -1.
    """
    if week < 0:
        return 1
    if week >= truth.moveout_week - 1:
        return 2
    return 3 if week % 2 == 0 else 1


def _hometag_rows(
    spec: ScenarioSpec, calendar: _Calendar, planted: Mapping[UnitId, UnitTruth], rng: np.random.Generator
) -> pl.DataFrame:
    """Weekly home tags from a balanced circulation that keeps every unit at P residents."""
    units = list(planted)
    residents = spec.residents_per_unit
    scale = max(1, residents // 20)
    home = np.repeat(np.arange(len(units)), residents)
    width = max(5, len(str(len(home))))
    user_ids = [f"p{index:0{width}d}" for index in range(1, len(home) + 1)]

    weeks = calendar.weeks
    history = [home.copy()]
    for week_start in weeks[1:]:
        number = calendar.week_number(week_start)
        movers = [_movers_per_week(planted[unit], number) * scale for unit in units]
        slots = np.repeat(np.arange(len(units)), movers)
        shift = max(movers)
        moving = []
        for index, count in enumerate(movers):
            current = np.flatnonzero(home == index)
            moving.extend(sorted(int(u) for u in rng.choice(current, size=count, replace=False)))
        destinations = slots[(np.arange(len(slots)) + shift) % len(slots)]
        home = home.copy()
        home[np.array(moving)] = destinations
        history.append(home.copy())

    rows_week, rows_user, rows_unit = [], [], []
    for index, week_start in enumerate(weeks):
        current = history[index]
        for user in range(len(current)):
            unit: Optional[str] = units[current[user]]
            if index > 0 and spec.tag_dropout and current[user] == history[index - 1][user]:
                draw = rng.random()
                if draw < spec.tag_dropout / 2:
                    continue
                if draw < spec.tag_dropout:
                    unit = None
            rows_week.append(week_start)
            rows_user.append(user_ids[user])
            rows_unit.append(unit)
    frame = pl.DataFrame(
        {"week_start": rows_week, "user": rows_user, "unit": rows_unit},
        schema={"week_start": pl.Date, "user": pl.String, "unit": pl.String},
    )
    return frame.sort(["week_start", "user"])


def _incomes(
    spec: ScenarioSpec,
    planted: Mapping[UnitId, UnitTruth],
    vulnerable: set[UnitId],
    rng: np.random.Generator,
) -> tuple[dict[UnitId, int], Optional[float]]:
    units = list(planted)
    lag1 = np.array([planted[u].lags.lag1 if planted[u].lags else np.nan for u in units])
    canonical = ~np.isnan(lag1)
    z = np.zeros(len(units))
    if canonical.sum() > 1 and np.nanstd(lag1) > 0:
        z[canonical] = (lag1[canonical] - np.nanmean(lag1)) / np.nanstd(lag1)
    rho = spec.income_lag_correlation
    noise = rng.normal(size=len(units))
    if canonical.sum() > 2 and z.any():
        # unit-variance noise orthogonal to lag1 puts the sample correlation at rho
        kept = noise[canonical] - noise[canonical].mean()
        kept -= (kept @ z[canonical]) / (z[canonical] @ z[canonical]) * z[canonical]
        if kept.std() > 0:
            noise[canonical] = kept / kept.std()
    latent = np.where(canonical, rho * z + math.sqrt(1.0 - rho**2) * noise, noise)
    values = np.maximum(1000.0, spec.income_mean + spec.income_sd * latent)

    if vulnerable:
        others = [v for u, v in zip(units, values) if u not in vulnerable]
        lowest = min(others) if others else spec.income_mean
        for index, unit in enumerate(units):
            if unit in vulnerable:
                values[index] = max(500.0, lowest * rng.uniform(0.3, 0.9))

    incomes = {unit: int(round(value)) for unit, value in zip(units, values)}
    realized = None
    if canonical.sum() >= 3:
        x = lag1[canonical]
        y = np.array([incomes[u] for u, keep in zip(units, canonical) if keep], dtype=np.float64)
        if np.std(x) > 0 and np.std(y) > 0:
            realized = float(np.corrcoef(x, y)[0, 1])
    return incomes, realized


def _claim_rows(
    spec: ScenarioSpec, units: Sequence[UnitId], vulnerable: set[UnitId], rng: np.random.Generator
) -> pl.DataFrame:
    records: list[tuple[str, str, str, str, int, int]] = []
    building = 0

    def add(source: str, building_id: str, unit: str, damage: int, value: int) -> None:
        records.append((f"c{len(records) + 1:06d}", source, building_id, unit, damage, value))

    for unit in units:
        if unit in vulnerable or rng.random() < spec.claim_free_fraction:
            continue
        for _ in range(1 + int(rng.poisson(max(spec.claims_per_unit - 1.0, 0.0)))):
            building += 1
            building_id = f"b{building:06d}"
            value = int(rng.integers(100, 401)) * 1000
            damage = max(1, int(round(value * rng.uniform(0.02, 0.9))))
            if rng.random() < spec.nfip_share:
                if rng.random() < spec.split_claim_fraction and damage > 1:
                    part = max(1, damage // 3)
                    add("NFIP", building_id, unit, part, value)
                    add("NFIP", building_id, unit, damage - part, value)
                else:
                    add("NFIP", building_id, unit, damage, value)
                if rng.random() < spec.dual_claim_fraction:
                    add("IA", building_id, unit, max(1, damage // 4), value)
            else:
                add("IA", building_id, unit, min(damage, 80_000), value)
    schema = dict.fromkeys(COLUMNS[CLAIMS_FILE], pl.String) | {"damage": pl.Int64, "property_value": pl.Int64}
    return pl.DataFrame(records, schema=schema, orient="row")


def build_scenario(spec: ScenarioSpec) -> Scenario:
    validate_scenario(spec)
    rng = np.random.default_rng(spec.seed)
    units = _unit_ids(spec.unit_count)
    calendar = _calendar(spec)

    planted, vulnerable, lattices = _plant_units(spec, units, rng)
    for unit, truth in planted.items():
        _check_horizon(unit, truth, spec, calendar)

    tables = {
        VISITS_FILE: _visit_rows(spec, calendar, planted, rng),
        EVAC_FILE: _evac_rows(spec, calendar, planted, rng),
        HOMETAGS_FILE: _hometag_rows(spec, calendar, planted, rng),
    }
    incomes, realized = _incomes(spec, planted, vulnerable, rng)
    tables[CLAIMS_FILE] = _claim_rows(spec, units, vulnerable, rng)
    tables[INCOME_FILE] = pl.DataFrame(
        {"unit": list(incomes), "median_household_income": list(incomes.values())},
        schema={"unit": pl.String, "median_household_income": pl.Int64},
    )

    truth = GroundTruth(
        seed=spec.seed,
        units=planted,
        lag_models={label.value: lattice.model for label, lattice in lattices.items()},
        planted_correlation=spec.income_lag_correlation,
        realized_correlation=realized,
    )
    return Scenario(tables, truth)


def generate_scenario(spec: ScenarioSpec, directory: Path | str) -> GroundTruth:
    """Write the five input CSVs and ``ground_truth.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    scenario = build_scenario(spec)
    for name, frame in scenario.tables.items():
        frame.select(COLUMNS[name]).write_csv(directory / name)
    with (directory / GROUND_TRUTH_FILE).open("w", encoding="utf-8") as file:
        json.dump(scenario.truth.to_dict(), file, indent=2, sort_keys=True, allow_nan=False)
        file.write("\n")
    logger.info("Generated %d units with seed %d into %s", spec.unit_count, spec.seed, directory)
    return scenario.truth


def with_seed(spec: ScenarioSpec, seed: Optional[int]) -> ScenarioSpec:
    return spec if seed is None else replace(spec, seed=seed)


def ols_oracle(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Closed-form least squares with compensated sums."""
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("ols_oracle needs two equal-length sequences of at least 2 values")
    n = len(x)
    mean_x = math.fsum(x) / n
    mean_y = math.fsum(y) / n
    sxx = math.fsum((xi - mean_x) ** 2 for xi in x)
    if sxx == 0:
        raise ConstantRegressor("regressor is constant")
    sxy = math.fsum((xi - mean_x) * (yi - mean_y) for xi, yi in zip(x, y))
    beta1 = sxy / sxx
    return mean_y - beta1 * mean_x, beta1


T = TypeVar("T")


def scan_oracle(series: Sequence[T], predicate: Callable[[T], bool], run_length: int) -> Optional[int]:
    for start in range(len(series) - run_length + 1):
        if all(predicate(series[start + offset]) for offset in range(run_length)):
            return start
    return None
