"""Shared vocabulary: study configuration, milestone and sequence types."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterator, NewType, Optional

from .errors import ConfigError, ConfigIssue

logger = logging.getLogger(__name__)

UnitId = NewType("UnitId", str)

DateRange = tuple[dt.date, dt.date]

HARVEY_LANDFALL = dt.date(2017, 8, 25)


class MilestoneKind(str, Enum):
    """The four recovery milestones, declared in canonical tie-break priority."""

    EVACUATION = "evacuation"
    ESSENTIAL = "essential"
    NONESSENTIAL = "nonessential"
    MOVEOUT = "moveout"

    @property
    def priority(self) -> int:
        return _KIND_ORDER.index(self)

    @property
    def column(self) -> str:
        return _COLUMN_PREFIX[self]

    @property
    def description(self) -> str:
        return _DESCRIPTIONS[self]


_KIND_ORDER = list(MilestoneKind)
_COLUMN_PREFIX = {
    MilestoneKind.EVACUATION: "evac",
    MilestoneKind.ESSENTIAL: "essential",
    MilestoneKind.NONESSENTIAL: "nonessential",
    MilestoneKind.MOVEOUT: "moveout",
}
_DESCRIPTIONS = {
    MilestoneKind.EVACUATION: "Evacuation recovery",
    MilestoneKind.ESSENTIAL: "Essential activity recovery",
    MilestoneKind.NONESSENTIAL: "Non-essential activity recovery",
    MilestoneKind.MOVEOUT: "Move-out recovery",
}


class SequenceLabel(str, Enum):
    SEQ1 = "Seq1"
    SEQ2 = "Seq2"
    SEQ3 = "Seq3"
    SEQ4 = "Seq4"
    SEQ5 = "Seq5"
    SEQ6 = "Seq6"
    OTHER = "Other"

    @property
    def is_canonical(self) -> bool:
        return self is not SequenceLabel.OTHER

    @property
    def order(self) -> Optional[tuple[MilestoneKind, ...]]:
        return SEQUENCE_ORDERS.get(self)

    @property
    def description(self) -> str:
        order = self.order
        if order is None:
            return "Other sequences"
        return " <= ".join(kind.description for kind in order)

    @classmethod
    def canonical(cls) -> list[SequenceLabel]:
        return [label for label in cls if label.is_canonical]


_E, _S, _N, _M = (
    MilestoneKind.EVACUATION,
    MilestoneKind.ESSENTIAL,
    MilestoneKind.NONESSENTIAL,
    MilestoneKind.MOVEOUT,
)

SEQUENCE_ORDERS: dict[SequenceLabel, tuple[MilestoneKind, ...]] = {
    SequenceLabel.SEQ1: (_E, _S, _N, _M),
    SequenceLabel.SEQ2: (_E, _N, _S, _M),
    SequenceLabel.SEQ3: (_E, _S, _M, _N),
    SequenceLabel.SEQ4: (_E, _M, _S, _N),
    SequenceLabel.SEQ5: (_E, _N, _M, _S),
    SequenceLabel.SEQ6: (_E, _M, _N, _S),
}


@dataclass(frozen=True)
class MilestoneSet:
    """Recovery times in weeks since landfall; ``None`` means censored."""

    evacuation: Optional[float] = None
    essential: Optional[float] = None
    nonessential: Optional[float] = None
    moveout: Optional[float] = None

    def __post_init__(self) -> None:
        for kind in MilestoneKind:
            value = self.get(kind)
            if value is not None and value < 0:
                raise ValueError(f"{kind.value} recovery time must be >= 0, got {value}")

    def get(self, kind: MilestoneKind) -> Optional[float]:
        return getattr(self, kind.value)

    def items(self) -> Iterator[tuple[MilestoneKind, Optional[float]]]:
        for kind in MilestoneKind:
            yield kind, self.get(kind)

    def is_censored(self, kind: MilestoneKind) -> bool:
        return self.get(kind) is None

    @property
    def complete(self) -> bool:
        return all(value is not None for _, value in self.items())

    @classmethod
    def from_mapping(cls, times: dict[MilestoneKind, Optional[float]]) -> MilestoneSet:
        return cls(**{kind.value: times.get(kind) for kind in MilestoneKind})


@dataclass(frozen=True)
class StudyConfig:
    landfall_date: dt.date = HARVEY_LANDFALL
    visit_baseline_window: Optional[DateRange] = None
    evac_baseline_window: DateRange = (dt.date(2017, 7, 9), dt.date(2017, 8, 5))
    moveout_baseline_window: DateRange = (dt.date(2017, 7, 9), dt.date(2017, 8, 12))
    activity_threshold: float = 0.90
    activity_run_days: int = 3
    evac_tolerance: float = 0.10
    evac_run_days: int = 3
    evac_deadline: dt.date = dt.date(2017, 11, 23)
    steady_state_tolerance: float = 10.0
    steady_state_run_weeks: int = 1
    nfip_cap: int = 500_000
    ia_cap: int = 50_000
    income_quantile_count: int = 4
    evac_deviation_mode: str = "relative"
    lag_mode: str = "cumulative"
    normalize_lags: bool = False
    unit_pde_statistic: str = "mean"
    pde_normalization: str = "pooled"
    correlation_method: str = "pearson"
    week_anchor: Optional[dt.date] = None
    huber_c: float = 1.345
    huber_tol: float = 1e-8
    huber_max_iter: int = 50

    def __post_init__(self) -> None:
        if self.visit_baseline_window is None:
            end = self.landfall_date - dt.timedelta(days=1)
            start = self.landfall_date - dt.timedelta(days=21)
            object.__setattr__(self, "visit_baseline_window", (start, end))

    @property
    def visit_window(self) -> DateRange:
        assert self.visit_baseline_window is not None
        return self.visit_baseline_window


_CHOICES = {
    "evac_deviation_mode": ("relative", "percent_change"),
    "lag_mode": ("cumulative", "consecutive"),
    "unit_pde_statistic": ("mean", "median", "max"),
    "pde_normalization": ("pooled", "per_source"),
    "correlation_method": ("pearson", "spearman"),
}


def weeks_since_landfall(d: dt.date, cfg: StudyConfig) -> Fraction:
    return Fraction((d - cfg.landfall_date).days, 7)


def config_issues(cfg: StudyConfig) -> list[ConfigIssue]:
    issues: list[ConfigIssue] = []
    windows = {
        "visit_baseline_window": cfg.visit_window,
        "evac_baseline_window": cfg.evac_baseline_window,
        "moveout_baseline_window": cfg.moveout_baseline_window,
    }
    for name, (start, end) in windows.items():
        if start > end:
            issues.append(ConfigIssue("InvalidWindow", f"{name} starts after it ends"))
        if end >= cfg.landfall_date:
            issues.append(
                ConfigIssue("WindowOverlapsLandfall", f"{name} must end before {cfg.landfall_date}")
            )

    for name in ("activity_threshold", "evac_tolerance"):
        value = getattr(cfg, name)
        if not 0 < value <= 1:
            issues.append(ConfigIssue("NonPositiveThreshold", f"{name} must be in (0, 1], got {value}"))
    if cfg.steady_state_tolerance <= 0:
        issues.append(
            ConfigIssue(
                "NonPositiveThreshold",
                f"steady_state_tolerance must be > 0, got {cfg.steady_state_tolerance}",
            )
        )

    if cfg.evac_deadline <= cfg.landfall_date:
        issues.append(
            ConfigIssue("DeadlineBeforeLandfall", f"evac_deadline {cfg.evac_deadline} is not after landfall")
        )

    for name in ("activity_run_days", "evac_run_days", "steady_state_run_weeks", "huber_max_iter"):
        if getattr(cfg, name) < 1:
            issues.append(ConfigIssue("NonPositiveRunLength", f"{name} must be >= 1"))
    for name in ("nfip_cap", "ia_cap"):
        if getattr(cfg, name) <= 0:
            issues.append(ConfigIssue("NonPositiveCap", f"{name} must be > 0"))
    if cfg.income_quantile_count < 2:
        issues.append(ConfigIssue("InvalidQuantileCount", "income_quantile_count must be >= 2"))
    if cfg.huber_c <= 0 or cfg.huber_tol <= 0:
        issues.append(ConfigIssue("NonPositiveThreshold", "huber_c and huber_tol must be > 0"))

    for name, allowed in _CHOICES.items():
        if getattr(cfg, name) not in allowed:
            issues.append(ConfigIssue("InvalidChoice", f"{name} must be one of {', '.join(allowed)}"))
    return issues


def validate_config(cfg: StudyConfig) -> StudyConfig:
    issues = config_issues(cfg)
    if issues:
        raise ConfigError(issues)
    return cfg


def _parse_date(name: str, value: Any) -> dt.date:
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError([ConfigIssue("InvalidDate", f"{name}: '{value}' is not YYYY-MM-DD")]) from None


def config_from_dict(payload: dict[str, Any]) -> StudyConfig:
    known = {f.name for f in fields(StudyConfig)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError([ConfigIssue("UnknownKey", f"unknown config keys: {', '.join(unknown)}")])

    values: dict[str, Any] = {}
    for name, value in payload.items():
        if value is None:
            values[name] = None
        elif name.endswith("_window"):
            if not isinstance(value, (list, tuple)) or len(value) != 2:
                raise ConfigError([ConfigIssue("InvalidWindow", f"{name} must be [start, end]")])
            values[name] = (_parse_date(name, value[0]), _parse_date(name, value[1]))
        elif name in ("landfall_date", "evac_deadline", "week_anchor"):
            values[name] = _parse_date(name, value)
        else:
            values[name] = value
    return validate_config(StudyConfig(**values))


def load_config(path: Path | str) -> StudyConfig:
    path = Path(path)
    logger.debug("Loading study config from %s", path)
    payload = read_document(path)
    return config_from_dict(payload)


def read_document(path: Path) -> dict[str, Any]:
    """Read a JSON object, reporting unreadable files as configuration errors."""
    try:
        with path.open("r", encoding="utf-8") as file:
            payload = json.load(file)
    except FileNotFoundError:
        raise ConfigError([ConfigIssue("MissingFile", str(path))]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([ConfigIssue("InvalidDocument", f"{path}: {exc}")]) from None
    if not isinstance(payload, dict):
        raise ConfigError([ConfigIssue("InvalidDocument", f"{path} must hold a JSON object")])
    return payload


def config_to_dict(cfg: StudyConfig) -> dict[str, Any]:
    payload: dict[str, Any] = {}
    for name, value in asdict(cfg).items():
        if isinstance(value, dt.date):
            payload[name] = value.isoformat()
        elif isinstance(value, tuple):
            payload[name] = [item.isoformat() for item in value]
        else:
            payload[name] = value
    return payload


def config_hash(cfg: StudyConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def with_overrides(cfg: StudyConfig, **changes: Any) -> StudyConfig:
    changes = {name: value for name, value in changes.items() if value is not None}
    if not changes:
        return cfg
    return validate_config(replace(cfg, **changes))


__all__ = [
    "DateRange",
    "MilestoneKind",
    "MilestoneSet",
    "SEQUENCE_ORDERS",
    "SequenceLabel",
    "StudyConfig",
    "UnitId",
    "config_from_dict",
    "config_hash",
    "config_issues",
    "config_to_dict",
    "load_config",
    "validate_config",
    "weeks_since_landfall",
    "with_overrides",
]

