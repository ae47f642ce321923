"""Property damage extent, income and PDE quantiles, and disparity tables."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Sequence

import numpy as np
import polars as pl

from .errors import NonPositiveValue, TooFewValues
from .model import SequenceLabel, StudyConfig, UnitId

if TYPE_CHECKING:
    from .ingest import Dataset
    from .trajectory import SequenceAssignment

logger = logging.getLogger(__name__)

NFIP = "NFIP"
IA = "IA"

UPPER = "upper"
MEDIAN = "median"
LOWER = "lower"
GROUPS = (UPPER, MEDIAN, LOWER)

_LAGS = ("lag1", "lag2", "lag3")


def merge_claims(claims: pl.DataFrame) -> pl.DataFrame:
    """One effective claim per building; NFIP claims take precedence over IA.

    Damage is summed over the selected source's claims and the largest
    property value is kept when they disagree.
    """
    schema = {
        "building_id": pl.String,
        "unit": pl.String,
        "source_used": pl.String,
        "damage": pl.Int64,
        "property_value": pl.Int64,
        "claims": pl.Int64,
    }
    if claims.is_empty():
        return pl.DataFrame(schema=schema)

    has_nfip = (pl.col("source") == NFIP).any().over("building_id")
    selected = claims.filter(~has_nfip | (pl.col("source") == NFIP))

    merged = selected.group_by("building_id").agg(
        pl.col("unit").min(),
        pl.col("source").first().alias("source_used"),
        pl.col("damage").sum(),
        pl.col("property_value").max(),
        pl.col("property_value").n_unique().alias("values"),
        pl.len().cast(pl.Int64).alias("claims"),
    )
    for row in merged.filter(pl.col("values") > 1).sort("building_id").iter_rows(named=True):
        logger.warning(
            "ConflictingPropertyValue: building %s has differing property values; using %d",
            row["building_id"],
            row["property_value"],
        )
    return merged.select(list(schema)).sort("building_id")


def pde_raw(damage: float, value: float, source: str, cfg: StudyConfig) -> float:
    if value <= 0:
        raise NonPositiveValue("property_value", value)
    if damage <= 0:
        raise NonPositiveValue("damage", damage)
    cap = cfg.nfip_cap if source == NFIP else cfg.ia_cap
    return min(damage, cap) / value


def minmax_normalize(values: Sequence[float] | np.ndarray) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64)
    if array.size == 0:
        raise ValueError("minmax_normalize needs at least one value")
    low, high = array.min(), array.max()
    if high == low:
        return np.zeros_like(array)
    return (array - low) / (high - low)


@dataclass(frozen=True)
class PdeScore:
    building_id: str
    unit: UnitId
    source_used: str
    raw: float
    normalized: float


def pde_scores(claims: pl.DataFrame, cfg: StudyConfig) -> tuple[PdeScore, ...]:
    merged = merge_claims(claims)
    if merged.is_empty():
        return ()

    rows = list(merged.iter_rows(named=True))
    raws = np.array([pde_raw(r["damage"], r["property_value"], r["source_used"], cfg) for r in rows])
    normalized = np.zeros_like(raws)
    if cfg.pde_normalization == "per_source":
        sources = np.array([r["source_used"] for r in rows])
        for source in np.unique(sources):
            mask = sources == source
            normalized[mask] = minmax_normalize(raws[mask])
    else:
        normalized = minmax_normalize(raws)

    return tuple(
        PdeScore(r["building_id"], UnitId(r["unit"]), r["source_used"], float(raw), float(norm))
        for r, raw, norm in zip(rows, raws, normalized)
    )


@dataclass(frozen=True)
class QuantileBreaks:
    """Equal-probability classes labelled 1..k.

    Class j covers ``[breaks[j-1], breaks[j])``, the top class is closed, and
    a value sitting on a repeated boundary goes to the lowest class that
    starts there.
    """

    breaks: tuple[float, ...]
    labels: tuple[int, ...]

    @property
    def k(self) -> int:
        return len(self.breaks) - 1

    def classify(self, value: float) -> int:
        breaks = np.asarray(self.breaks)
        lower = int(np.searchsorted(breaks[: self.k], value, side="left"))
        if lower < self.k and breaks[lower] == value:
            return lower + 1
        return int(np.searchsorted(breaks[1 : self.k], value, side="right")) + 1


def quantile_breaks(values: Sequence[float] | np.ndarray, k: int) -> QuantileBreaks:
    array = np.asarray(values, dtype=np.float64)
    if len(array) < k:
        raise TooFewValues(f"need at least {k} values for {k} classes, got {len(array)}")
    breaks = tuple(float(b) for b in np.quantile(array, np.linspace(0.0, 1.0, k + 1), method="linear"))
    partial = QuantileBreaks(breaks, ())
    return QuantileBreaks(breaks, tuple(partial.classify(value) for value in array))


@dataclass(frozen=True)
class VulnerabilityProfile:
    unit: UnitId
    pde: float
    income: Optional[int]
    pde_quantile: Optional[int]
    income_quantile: Optional[int]


_STATISTICS = {"mean": np.mean, "median": np.median, "max": np.max}


def _classes(units: Sequence[str], values: Sequence[float], k: int, what: str) -> dict[str, int]:
    try:
        breaks = quantile_breaks(values, k)
    except TooFewValues as exc:
        logger.warning("No %s quantiles: %s", what, exc)
        return {}
    return dict(zip(units, breaks.labels))


def unit_profiles(dataset: Dataset, cfg: StudyConfig) -> dict[UnitId, VulnerabilityProfile]:
    """Unit PDE, income and their quantile classes for every unit in the roster."""
    statistic = _STATISTICS[cfg.unit_pde_statistic]
    by_unit: dict[str, list[float]] = {}
    for score in pde_scores(dataset.claims, cfg):
        by_unit.setdefault(score.unit, []).append(score.normalized)

    roster = list(dataset.roster)
    pde = {unit: float(statistic(by_unit[unit])) if unit in by_unit else 0.0 for unit in roster}
    income = {
        row["unit"]: int(row["median_household_income"]) for row in dataset.income.iter_rows(named=True)
    }

    k = cfg.income_quantile_count
    pde_classes = _classes(roster, [pde[unit] for unit in roster], k, "PDE")
    with_income = [unit for unit in roster if unit in income]
    income_classes = _classes(with_income, [income[unit] for unit in with_income], k, "income")

    return {
        UnitId(unit): VulnerabilityProfile(
            UnitId(unit), pde[unit], income.get(unit), pde_classes.get(unit), income_classes.get(unit)
        )
        for unit in roster
    }


@dataclass(frozen=True)
class CrosstabPanel:
    pde_quantile: int
    counts: Mapping[SequenceLabel, tuple[int, ...]]
    total: int

    @property
    def expected(self) -> float:
        """Units per income class under a uniform spread."""
        return self.total / len(next(iter(self.counts.values())))

    def expected_cell(self, label: SequenceLabel) -> float:
        row = self.counts[label]
        return sum(row) / len(row)

    def to_dict(self) -> dict[str, object]:
        return {
            "pde_quantile": f"Q{self.pde_quantile}",
            "total": self.total,
            "expected": self.expected,
            "counts": {label.value: list(row) for label, row in self.counts.items()},
        }


def sequence_by_quantile(
    assignments: Iterable[SequenceAssignment],
    profiles: Mapping[UnitId, VulnerabilityProfile],
    k: int = 4,
) -> list[CrosstabPanel]:
    """Sequence counts per income class for the lowest and highest PDE classes."""
    panels = []
    for pde_quantile in (1, k):
        counts = {label: [0] * k for label in SequenceLabel}
        total = 0
        for assignment in assignments:
            profile = profiles.get(assignment.unit)
            if profile is None or profile.pde_quantile != pde_quantile or profile.income_quantile is None:
                continue
            counts[assignment.label][profile.income_quantile - 1] += 1
            total += 1
        panels.append(CrosstabPanel(pde_quantile, {label: tuple(row) for label, row in counts.items()}, total))
    return panels


def income_group(income_quantile: Optional[int], k: int) -> Optional[str]:
    if income_quantile is None:
        return None
    if income_quantile == k:
        return UPPER
    if income_quantile == 1:
        return LOWER
    return MEDIAN


@dataclass(frozen=True)
class DisparityTable:
    """Percent change of group mean lag relative to the sequence mean; positive is slower."""

    changes: Mapping[str, Mapping[str, Mapping[str, Optional[float]]]]
    means: Mapping[str, Mapping[str, Mapping[str, Optional[float]]]]
    counts: Mapping[str, Mapping[str, int]]

    def change(self, label: SequenceLabel, lag: str, group: str) -> Optional[float]:
        return self.changes[label.value][lag][group]

    def to_dict(self) -> dict[str, object]:
        return {
            label: {
                **{lag: dict(groups) for lag, groups in lags.items()},
                "means": {lag: dict(groups) for lag, groups in self.means[label].items()},
                "counts": dict(self.counts[label]),
            }
            for label, lags in self.changes.items()
        }


def _mean(values: Sequence[float]) -> Optional[float]:
    return math.fsum(values) / len(values) if values else None


def lag_percent_change(
    assignments: Iterable[SequenceAssignment],
    profiles: Mapping[UnitId, VulnerabilityProfile],
    k: int = 4,
) -> DisparityTable:
    members: dict[SequenceLabel, list[SequenceAssignment]] = {label: [] for label in SequenceLabel.canonical()}
    for assignment in assignments:
        if assignment.lags is not None and assignment.label.is_canonical:
            members[assignment.label].append(assignment)

    changes: dict[str, dict[str, dict[str, Optional[float]]]] = {}
    means: dict[str, dict[str, dict[str, Optional[float]]]] = {}
    counts: dict[str, dict[str, int]] = {}
    for label, rows in members.items():
        groups = {
            a.unit: income_group(profiles[a.unit].income_quantile if a.unit in profiles else None, k) for a in rows
        }
        counts[label.value] = {"all": len(rows), **{g: sum(1 for v in groups.values() if v == g) for g in GROUPS}}
        changes[label.value] = {}
        means[label.value] = {}
        for index, lag in enumerate(_LAGS):
            overall = _mean([a.lags.values[index] for a in rows])  # type: ignore[union-attr]
            lag_means: dict[str, Optional[float]] = {"all": overall}
            lag_changes: dict[str, Optional[float]] = {}
            for group in GROUPS:
                group_mean = _mean([a.lags.values[index] for a in rows if groups[a.unit] == group])  # type: ignore[union-attr]
                lag_means[group] = group_mean
                if group_mean is None or overall is None or overall == 0:
                    lag_changes[group] = None
                else:
                    lag_changes[group] = 100.0 * (group_mean - overall) / overall
            changes[label.value][lag] = lag_changes
            means[label.value][lag] = lag_means
    return DisparityTable(changes, means, counts)


def _income_summary(values: Sequence[float]) -> dict[str, Optional[float]]:
    if not values:
        return {"mean": None, "q25": None, "q75": None, "n": 0}
    q25, q75 = np.quantile(values, [0.25, 0.75])
    return {"mean": _mean(values), "q25": float(q25), "q75": float(q75), "n": len(values)}


def income_by_sequence(
    assignments: Iterable[SequenceAssignment],
    profiles: Mapping[UnitId, VulnerabilityProfile],
    k: int = 4,
) -> dict[str, dict[str, dict[str, Optional[float]]]]:
    """Mean income with interquartile range per sequence for the upper and lower income groups."""
    incomes: dict[str, dict[str, list[float]]] = {
        label.value: {UPPER: [], LOWER: []} for label in SequenceLabel.canonical()
    }
    for assignment in assignments:
        profile = profiles.get(assignment.unit)
        if not assignment.label.is_canonical or profile is None or profile.income is None:
            continue
        group = income_group(profile.income_quantile, k)
        if group in (UPPER, LOWER):
            incomes[assignment.label.value][group].append(float(profile.income))

    return {
        label: {group: _income_summary(values) for group, values in groups.items()} for label, groups in incomes.items()
    }


def income_by_pde_quantile(
    profiles: Mapping[UnitId, VulnerabilityProfile], k: int = 4
) -> dict[str, dict[str, Optional[float]]]:
    """Mean income with interquartile range for every PDE class, ``Q1`` to ``Qk``."""
    incomes: dict[int, list[float]] = {quantile: [] for quantile in range(1, k + 1)}
    for profile in profiles.values():
        quantile = profile.pde_quantile
        if quantile is not None and quantile in incomes and profile.income is not None:
            incomes[quantile].append(float(profile.income))
    return {f"Q{quantile}": _income_summary(values) for quantile, values in incomes.items()}


VULNERABILITY_COLUMNS = ["unit", "pde", "income", "pde_quantile", "income_quantile"]


def _quantile_label(value: Optional[int]) -> Optional[str]:
    return None if value is None else f"Q{value}"


def write_vulnerability(path: Path | str, profiles: Mapping[UnitId, VulnerabilityProfile]) -> None:
    rows = [
        (
            p.unit,
            repr(float(p.pde)),
            None if p.income is None else str(p.income),
            _quantile_label(p.pde_quantile),
            _quantile_label(p.income_quantile),
        )
        for p in (profiles[unit] for unit in sorted(profiles))
    ]
    frame = pl.DataFrame(rows, schema={column: pl.String for column in VULNERABILITY_COLUMNS}, orient="row")
    frame.write_csv(path)
    logger.info("Wrote %s", path)


def read_vulnerability(path: Path | str) -> dict[UnitId, VulnerabilityProfile]:
    frame = pl.read_csv(path, infer_schema=False)

    def quantile(value: Optional[str]) -> Optional[int]:
        return None if value is None else int(value.removeprefix("Q"))

    return {
        UnitId(row["unit"]): VulnerabilityProfile(
            UnitId(row["unit"]),
            float(row["pde"]),
            None if row["income"] is None else int(row["income"]),
            quantile(row["pde_quantile"]),
            quantile(row["income_quantile"]),
        )
        for row in frame.iter_rows(named=True)
    }
