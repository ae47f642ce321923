"""Sequence classification, lags, robust regressions and correlations."""

from __future__ import annotations

import concurrent.futures
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Sequence

import numpy as np
import polars as pl
from scipy import stats

from .errors import (
    CensoredMilestone,
    ConstantRegressor,
    InsufficientMembers,
    TooFewObservations,
)
from .milestones import format_float
from .model import SEQUENCE_ORDERS, MilestoneKind, MilestoneSet, SequenceLabel, StudyConfig, UnitId
from .vulnerability import minmax_normalize

if TYPE_CHECKING:
    from .vulnerability import VulnerabilityProfile

logger = logging.getLogger(__name__)

CUMULATIVE = "cumulative"
CONSECUTIVE = "consecutive"

LAG_NAMES = ("lag1", "lag2", "lag3")
CORRELATION_NAMES = ("lag1", "lag2", "lag3", "pde", "income")
MAD_FACTOR = 1.4826

OrderedMilestones = tuple[tuple[MilestoneKind, float], ...]

_ORDER_TO_LABEL = {order: label for label, order in SEQUENCE_ORDERS.items()}


@dataclass(frozen=True)
class LagTriple:
    lag1: float
    lag2: float
    lag3: float
    mode: str = CUMULATIVE

    def __post_init__(self) -> None:
        if min(self.lag1, self.lag2, self.lag3) < 0:
            raise ValueError(f"lags must be >= 0, got {self.values}")
        if self.mode == CUMULATIVE and not self.lag1 <= self.lag2 <= self.lag3:
            raise ValueError(f"cumulative lags must be non-decreasing, got {self.values}")

    @property
    def values(self) -> tuple[float, float, float]:
        return (self.lag1, self.lag2, self.lag3)


@dataclass(frozen=True)
class SequenceAssignment:
    unit: UnitId
    label: SequenceLabel
    ordered: OrderedMilestones = ()
    lags: Optional[LagTriple] = None
    reason: str = "classified"


def order_milestones(ms: MilestoneSet) -> OrderedMilestones:
    """Milestones sorted by time, exact ties broken by canonical priority."""
    pairs = []
    for kind, time in ms.items():
        if time is None:
            raise CensoredMilestone(f"{kind.value} milestone is censored")
        pairs.append((kind, float(time)))
    return tuple(sorted(pairs, key=lambda pair: (pair[1], pair[0].priority)))


def classify_sequence(ms: MilestoneSet) -> SequenceLabel:
    if not ms.complete:
        return SequenceLabel.OTHER
    order = tuple(kind for kind, _ in order_milestones(ms))
    return _ORDER_TO_LABEL.get(order, SequenceLabel.OTHER)


def compute_lags(ordered: OrderedMilestones, mode: str = CUMULATIVE) -> LagTriple:
    if len(ordered) != 4 or any(time is None for _, time in ordered):
        raise CensoredMilestone("lags need all four milestones")
    times = [time for _, time in ordered]
    if mode == CONSECUTIVE:
        return LagTriple(times[1] - times[0], times[2] - times[1], times[3] - times[2], mode)
    return LagTriple(times[1] - times[0], times[2] - times[0], times[3] - times[0], mode)


def assign_sequences(
    milestones: Mapping[UnitId, MilestoneSet], mode: str = CUMULATIVE
) -> list[SequenceAssignment]:
    assignments = []
    for unit in sorted(milestones):
        ms = milestones[unit]
        if not ms.complete:
            assignments.append(SequenceAssignment(unit, SequenceLabel.OTHER, reason="censored"))
            continue
        ordered = order_milestones(ms)
        label = classify_sequence(ms)
        if label is SequenceLabel.OTHER:
            assignments.append(SequenceAssignment(unit, label, ordered, reason="order"))
        else:
            assignments.append(SequenceAssignment(unit, label, ordered, compute_lags(ordered, mode)))
    return assignments


@dataclass(frozen=True)
class DistributionRow:
    label: SequenceLabel
    count: int
    percent: float


def sequence_distribution(assignments: Sequence[SequenceAssignment]) -> list[DistributionRow]:
    if not assignments:
        raise TooFewObservations("no units to tabulate")
    total = len(assignments)
    counts = {label: 0 for label in SequenceLabel}
    for assignment in assignments:
        counts[assignment.label] += 1
    return [DistributionRow(label, counts[label], 100.0 * counts[label] / total) for label in SequenceLabel]


@dataclass(frozen=True)
class SequenceStats:
    label: SequenceLabel
    count: int
    frequency: float
    means: Mapping[MilestoneKind, Optional[float]]
    sds: Mapping[MilestoneKind, Optional[float]]
    mean_max_duration: Optional[float]
    rank: Optional[int]
    note: Optional[str] = None


def sequence_stats(
    assignments: Sequence[SequenceAssignment], milestones: Mapping[UnitId, MilestoneSet]
) -> list[SequenceStats]:
    """Per-sequence recovery-time means, sds and mean maximum duration, ranked ascending."""
    total = len(assignments)
    members: dict[SequenceLabel, list[MilestoneSet]] = {label: [] for label in SequenceLabel.canonical()}
    for assignment in assignments:
        if assignment.label.is_canonical:
            members[assignment.label].append(milestones[assignment.unit])

    durations: dict[SequenceLabel, float] = {}
    for label, sets in members.items():
        if sets:
            durations[label] = float(np.mean([max(time for _, time in ms.items()) for ms in sets]))
    order = list(SequenceLabel)
    ranked = sorted(durations, key=lambda label: (durations[label], order.index(label)))
    ranks = {label: position for position, label in enumerate(ranked, start=1)}

    rows = []
    for label, sets in members.items():
        means: dict[MilestoneKind, Optional[float]] = {}
        sds: dict[MilestoneKind, Optional[float]] = {}
        for kind in MilestoneKind:
            times = np.array([ms.get(kind) for ms in sets], dtype=np.float64)
            means[kind] = float(times.mean()) if len(times) else None
            sds[kind] = float(times.std(ddof=1)) if len(times) >= 2 else None
        note = None
        if len(sets) < 2:
            note = InsufficientMembers.__name__
            logger.debug("%s has %d members; standard deviations omitted", label.value, len(sets))
        rows.append(
            SequenceStats(
                label=label,
                count=len(sets),
                frequency=100.0 * len(sets) / total if total else 0.0,
                means=means,
                sds=sds,
                mean_max_duration=durations.get(label),
                rank=ranks.get(label),
                note=note,
            )
        )
    return rows


@dataclass(frozen=True, eq=False)
class RegressionFit:
    beta0: float
    beta1: float
    residuals: np.ndarray
    weights: np.ndarray
    scale: float
    se_beta0: float
    se_beta1: float
    p_beta0: float
    p_beta1: float
    n: int
    iterations: int
    converged: bool

    @property
    def stars(self) -> str:
        return significance_stars(self.p_beta1)

    def to_dict(self) -> dict[str, object]:
        return {
            "beta0": self.beta0,
            "beta1": self.beta1,
            "se_beta0": self.se_beta0,
            "se_beta1": self.se_beta1,
            "p_beta0": self.p_beta0,
            "p_beta1": self.p_beta1,
            "stars": self.stars,
            "scale": self.scale,
            "n": self.n,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def significance_stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def mad_scale(residuals: np.ndarray) -> float:
    return MAD_FACTOR * float(np.median(np.abs(residuals - np.median(residuals))))


def _weighted_solve(design: np.ndarray, y: np.ndarray, weights: np.ndarray) -> np.ndarray:
    root = np.sqrt(weights)
    solution, *_ = np.linalg.lstsq(design * root[:, None], y * root, rcond=None)
    return solution


def _p_value(estimate: float, se: float) -> float:
    if se == 0 or not math.isfinite(se):
        return 1.0 if estimate == 0 else 0.0
    return float(min(1.0, 2.0 * stats.norm.sf(abs(estimate / se))))


def huber_fit(
    x: Sequence[float] | np.ndarray,
    y: Sequence[float] | np.ndarray,
    c: float = 1.345,
    max_iter: int = 50,
    tol: float = 1e-8,
) -> RegressionFit:
    """Huber M-estimate of ``y = beta0 + beta1 * x`` by iteratively reweighted least squares.

    Starts from ordinary least squares and re-estimates the MAD residual scale
    on every iteration. Stops once no coefficient moves by ``tol`` or more.
    Standard errors come from the weighted least-squares covariance at the
    final weights; p-values use the normal approximation.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be one-dimensional and of equal length")
    n = len(x)
    if n < 3:
        raise TooFewObservations(f"huber_fit needs at least 3 observations, got {n}")
    if np.all(x == x[0]):
        raise ConstantRegressor("regressor is constant")

    design = np.column_stack([np.ones(n), x])
    weights = np.ones(n)
    beta = _weighted_solve(design, y, weights)
    iterations = 0
    converged = False
    scale = mad_scale(y - design @ beta)
    floor = np.finfo(np.float64).eps * max(1.0, float(np.max(np.abs(y))))

    while iterations < max_iter:
        residuals = y - design @ beta
        scale = mad_scale(residuals)
        if scale <= floor:
            converged = True
            break
        scaled = np.abs(residuals) / scale
        with np.errstate(divide="ignore"):
            weights = np.where(scaled <= c, 1.0, c / scaled)
        updated = _weighted_solve(design, y, weights)
        iterations += 1
        change = float(np.max(np.abs(updated - beta)))
        beta = updated
        if change < tol:
            converged = True
            break

    if not converged:
        logger.warning("Huber IRLS did not converge after %d iterations", max_iter)

    residuals = y - design @ beta
    sigma2 = float(np.sum(weights * residuals**2) / (n - 2))
    covariance = sigma2 * np.linalg.pinv(design.T @ (design * weights[:, None]))
    se0, se1 = (float(math.sqrt(max(value, 0.0))) for value in np.diag(covariance))
    return RegressionFit(
        beta0=float(beta[0]),
        beta1=float(beta[1]),
        residuals=residuals,
        weights=weights,
        scale=scale,
        se_beta0=se0,
        se_beta1=se1,
        p_beta0=_p_value(float(beta[0]), se0),
        p_beta1=_p_value(float(beta[1]), se1),
        n=n,
        iterations=iterations,
        converged=converged,
    )


REGRESSIONS = {
    "lag2_on_lag1": ("lag1", "lag2"),
    "lag3_on_lag2": ("lag2", "lag3"),
}


@dataclass(frozen=True)
class RegressionCell:
    fit: Optional[RegressionFit] = None
    note: Optional[str] = None

    def to_dict(self) -> dict[str, object]:
        if self.fit is None:
            return {"note": self.note}
        return self.fit.to_dict()


@dataclass(frozen=True)
class RegressionRow:
    label: SequenceLabel
    n: int
    cells: Mapping[str, RegressionCell] = field(default_factory=dict)

    def to_dict(self) -> dict[str, object]:
        payload: dict[str, object] = {"n": self.n}
        for name in REGRESSIONS:
            payload[name] = self.cells[name].to_dict()
        return payload


def _lag_columns(assignments: Sequence[SequenceAssignment], normalize: bool) -> dict[UnitId, tuple[float, ...]]:
    with_lags = [a for a in assignments if a.lags is not None]
    columns = np.array([a.lags.values for a in with_lags], dtype=np.float64).reshape(-1, 3)  # type: ignore[union-attr]
    if normalize and len(with_lags):
        columns = np.column_stack([minmax_normalize(columns[:, index]) for index in range(3)])
    return {a.unit: tuple(float(value) for value in row) for a, row in zip(with_lags, columns)}


def _fit_cell(x: Sequence[float], y: Sequence[float], cfg: StudyConfig) -> RegressionCell:
    try:
        return RegressionCell(huber_fit(x, y, cfg.huber_c, cfg.huber_max_iter, cfg.huber_tol))
    except (ConstantRegressor, TooFewObservations) as exc:
        return RegressionCell(note=type(exc).__name__)


def regression_table(
    assignments: Sequence[SequenceAssignment],
    cfg: StudyConfig,
    normalize: Optional[bool] = None,
    threads: int = 1,
) -> list[RegressionRow]:
    """Per-sequence fits of lag2 on lag1 and lag3 on lag2."""
    normalize = cfg.normalize_lags if normalize is None else normalize
    lags = _lag_columns(assignments, normalize)

    def fit_row(label: SequenceLabel) -> RegressionRow:
        rows = [lags[a.unit] for a in assignments if a.label is label and a.unit in lags]
        if len(rows) < 3:
            note = RegressionCell(note=InsufficientMembers.__name__)
            return RegressionRow(label, len(rows), {name: note for name in REGRESSIONS})
        cells = {}
        for name, (regressor, response) in REGRESSIONS.items():
            x = [row[LAG_NAMES.index(regressor)] for row in rows]
            y = [row[LAG_NAMES.index(response)] for row in rows]
            cells[name] = _fit_cell(x, y, cfg)
        return RegressionRow(label, len(rows), cells)

    labels = SequenceLabel.canonical()
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(fit_row, labels))
    return [fit_row(label) for label in labels]


def format_regression_table(rows: Sequence[RegressionRow]) -> str:
    """Render regression rows as a plain-text table, one column per sequence."""
    width = 14
    header = "".ljust(18) + "".join(row.label.value.rjust(width) for row in rows)
    lines = [header]
    for name, (regressor, response) in REGRESSIONS.items():
        lines.append(f"{response.capitalize()} on {regressor.capitalize()}")
        slope, slope_se, const, const_se, count = [], [], [], [], []
        for row in rows:
            fit = row.cells[name].fit
            if fit is None:
                note = row.cells[name].note or ""
                slope.append(note[:width - 1])
                slope_se.append("")
                const.append("")
                const_se.append("")
            else:
                slope.append(f"{fit.beta1:.3f}{fit.stars}")
                slope_se.append(f"({fit.se_beta1:.3f})")
                const.append(f"{fit.beta0:.3f}")
                const_se.append(f"({fit.se_beta0:.3f})")
            count.append(str(row.n))
        for title, values in (
            (f"  {regressor.capitalize()}", slope),
            ("", slope_se),
            ("  Constant", const),
            ("", const_se),
            ("  Observations", count),
        ):
            lines.append(title.ljust(18) + "".join(value.rjust(width) for value in values))
    lines.append("*** p<0.01, ** p<0.05, * p<0.1")
    return "\n".join(lines)


@dataclass(frozen=True)
class CorrelationMatrix:
    names: tuple[str, ...]
    r: tuple[tuple[Optional[float], ...], ...]
    p: tuple[tuple[Optional[float], ...], ...]
    n: int
    method: str

    def value(self, first: str, second: str) -> Optional[float]:
        return self.r[self.names.index(first)][self.names.index(second)]

    def to_dict(self) -> dict[str, object]:
        return {
            "method": self.method,
            "n": self.n,
            "names": list(self.names),
            "r": [list(row) for row in self.r],
            "p": [list(row) for row in self.p],
        }


def _finite(value: float) -> Optional[float]:
    value = float(value)
    return value if math.isfinite(value) else None


def correlation_matrix(columns: Mapping[str, Sequence[Optional[float]]], method: str = "pearson") -> CorrelationMatrix:
    """Pairwise correlations over the rows where every column is present."""
    names = tuple(columns)
    data = np.array(
        [[np.nan if value is None else value for value in columns[name]] for name in names], dtype=np.float64
    )
    complete = data[:, ~np.isnan(data).any(axis=0)] if data.size else data
    n = complete.shape[1] if complete.ndim == 2 else 0
    if n < 3:
        raise TooFewObservations(f"correlations need at least 3 complete observations, got {n}")

    correlate = stats.spearmanr if method == "spearman" else stats.pearsonr
    size = len(names)
    r: list[list[Optional[float]]] = [[None] * size for _ in range(size)]
    p: list[list[Optional[float]]] = [[None] * size for _ in range(size)]
    for i in range(size):
        constant_i = bool(np.all(complete[i] == complete[i][0]))
        if not constant_i:
            r[i][i], p[i][i] = 1.0, 0.0
        for j in range(i + 1, size):
            if constant_i or np.all(complete[j] == complete[j][0]):
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                statistic, p_value = correlate(complete[i], complete[j])
            r[i][j] = r[j][i] = _finite(statistic)
            p[i][j] = p[j][i] = _finite(p_value)
    return CorrelationMatrix(names, tuple(map(tuple, r)), tuple(map(tuple, p)), n, method)


def correlations(
    assignments: Sequence[SequenceAssignment],
    profiles: Mapping[UnitId, VulnerabilityProfile],
    method: str = "pearson",
) -> CorrelationMatrix:
    """Correlate lags with unit PDE and income over units that have all five."""
    columns: dict[str, list[Optional[float]]] = {name: [] for name in CORRELATION_NAMES}
    for assignment in assignments:
        if assignment.lags is None or assignment.unit not in profiles:
            continue
        profile = profiles[assignment.unit]
        for name, value in zip(LAG_NAMES, assignment.lags.values):
            columns[name].append(value)
        columns["pde"].append(profile.pde)
        columns["income"].append(None if profile.income is None else float(profile.income))
    return correlation_matrix(columns, method)


@dataclass(frozen=True)
class LagSummary:
    label: SequenceLabel
    n: int
    means: tuple[Optional[float], ...]
    sds: tuple[Optional[float], ...]

    def to_dict(self) -> dict[str, object]:
        return {
            "n": self.n,
            **{name: {"mean": mean, "sd": sd} for name, mean, sd in zip(LAG_NAMES, self.means, self.sds)},
        }


def lag_summary(assignments: Iterable[SequenceAssignment]) -> list[LagSummary]:
    grouped: dict[SequenceLabel, list[tuple[float, ...]]] = {label: [] for label in SequenceLabel.canonical()}
    for assignment in assignments:
        if assignment.lags is not None:
            grouped[assignment.label].append(assignment.lags.values)

    summaries = []
    for label, rows in grouped.items():
        values = np.array(rows, dtype=np.float64).reshape(-1, 3)
        means = tuple(float(v) for v in values.mean(axis=0)) if len(rows) else (None, None, None)
        sds = tuple(float(v) for v in values.std(axis=0, ddof=1)) if len(rows) >= 2 else (None, None, None)
        summaries.append(LagSummary(label, len(rows), means, sds))
    return summaries


SEQUENCE_COLUMNS = ["unit", "label", "lag1", "lag2", "lag3", "reason"]


def write_sequences(path: Path | str, assignments: Sequence[SequenceAssignment]) -> None:
    rows: dict[str, list[Optional[str]]] = {column: [] for column in SEQUENCE_COLUMNS}
    for assignment in assignments:
        rows["unit"].append(assignment.unit)
        rows["label"].append(assignment.label.value)
        values = assignment.lags.values if assignment.lags else (None, None, None)
        for name, value in zip(LAG_NAMES, values):
            rows[name].append(format_float(value))
        rows["reason"].append(assignment.reason)
    pl.DataFrame(rows, schema={column: pl.String for column in SEQUENCE_COLUMNS}).write_csv(path)
    logger.info("Wrote %s", path)


def read_sequences(path: Path | str, mode: str = CUMULATIVE) -> list[SequenceAssignment]:
    frame = pl.read_csv(path, infer_schema=False)
    assignments = []
    for row in frame.iter_rows(named=True):
        lags = None
        if row["lag1"] is not None:
            lags = LagTriple(float(row["lag1"]), float(row["lag2"]), float(row["lag3"]), mode)
        assignments.append(
            SequenceAssignment(
                UnitId(row["unit"]), SequenceLabel(row["label"]), lags=lags, reason=row.get("reason") or "classified"
            )
        )
    return assignments
