import itertools

import numpy as np
import pytest

from recovera.errors import CensoredMilestone, ConstantRegressor, TooFewObservations
from recovera.model import SEQUENCE_ORDERS, MilestoneKind, MilestoneSet, SequenceLabel
from recovera.synth import ols_oracle
from recovera.trajectory import (
    CONSECUTIVE,
    LagTriple,
    SequenceAssignment,
    assign_sequences,
    classify_sequence,
    compute_lags,
    correlation_matrix,
    format_regression_table,
    huber_fit,
    lag_summary,
    order_milestones,
    read_sequences,
    regression_table,
    sequence_distribution,
    sequence_stats,
    significance_stars,
    write_sequences,
)

_LABEL_BY_ORDER = {order: label for label, order in SEQUENCE_ORDERS.items()}


def _milestones(order, times=(1.0, 2.0, 3.0, 4.0)):
    return MilestoneSet.from_mapping(dict(zip(order, times)))


@pytest.mark.parametrize("order", list(itertools.permutations(MilestoneKind)))
def test_classify_every_ordering(order):
    expected = _LABEL_BY_ORDER.get(order, SequenceLabel.OTHER)
    assert classify_sequence(_milestones(order)) is expected


def test_six_orderings_are_canonical():
    labels = [classify_sequence(_milestones(order)) for order in itertools.permutations(MilestoneKind)]
    assert sum(label.is_canonical for label in labels) == 6
    assert labels.count(SequenceLabel.OTHER) == 18


def test_ties_follow_kind_priority():
    ms = MilestoneSet(evacuation=1.0, essential=1.0, nonessential=1.0, moveout=1.0)
    assert classify_sequence(ms) is SequenceLabel.SEQ1
    ms = MilestoneSet(evacuation=0.5, essential=2.0, nonessential=2.0, moveout=2.0)
    assert [kind for kind, _ in order_milestones(ms)] == list(MilestoneKind)


def test_censored_unit_is_other():
    ms = MilestoneSet(evacuation=1.0, essential=2.0, nonessential=None, moveout=3.0)
    assert classify_sequence(ms) is SequenceLabel.OTHER
    with pytest.raises(CensoredMilestone):
        order_milestones(ms)


def test_lags_cumulative_and_consecutive():
    ordered = order_milestones(MilestoneSet(evacuation=0.5, essential=1.0, nonessential=3.0, moveout=2.0))
    assert compute_lags(ordered).values == (0.5, 1.5, 2.5)
    assert compute_lags(ordered, CONSECUTIVE).values == (0.5, 1.0, 1.0)


def test_lag_triple_validates():
    with pytest.raises(ValueError):
        LagTriple(2.0, 1.0, 3.0)
    assert LagTriple(2.0, 1.0, 3.0, CONSECUTIVE).lag2 == 1.0
    with pytest.raises(ValueError):
        LagTriple(-1.0, 1.0, 3.0, CONSECUTIVE)


def test_assign_sequences_reasons():
    milestones = {
        "U1": _milestones(SEQUENCE_ORDERS[SequenceLabel.SEQ3]),
        "U2": MilestoneSet(evacuation=1.0),
        "U3": _milestones(tuple(reversed(list(MilestoneKind)))),
    }
    assignments = assign_sequences(milestones)
    assert [(a.unit, a.label, a.reason) for a in assignments] == [
        ("U1", SequenceLabel.SEQ3, "classified"),
        ("U2", SequenceLabel.OTHER, "censored"),
        ("U3", SequenceLabel.OTHER, "order"),
    ]
    assert assignments[0].lags.values == (1.0, 2.0, 3.0)
    assert assignments[1].lags is None and assignments[2].lags is None


def test_sequence_distribution():
    assignments = [SequenceAssignment(f"U{i}", SequenceLabel.SEQ1) for i in range(3)]
    assignments.append(SequenceAssignment("U9", SequenceLabel.OTHER))
    rows = sequence_distribution(assignments)
    assert [row.label for row in rows] == list(SequenceLabel)
    assert sum(row.count for row in rows) == 4
    assert rows[0].percent == 75.0
    assert sum(row.percent for row in rows) == pytest.approx(100.0)
    with pytest.raises(TooFewObservations):
        sequence_distribution([])


def test_sequence_stats_ranks_by_mean_max_duration():
    slow = _milestones(SEQUENCE_ORDERS[SequenceLabel.SEQ2], (1.0, 2.0, 3.0, 9.0))
    fast = _milestones(SEQUENCE_ORDERS[SequenceLabel.SEQ5], (1.0, 2.0, 3.0, 4.0))
    faster = _milestones(SEQUENCE_ORDERS[SequenceLabel.SEQ5], (1.0, 1.5, 2.0, 2.5))
    milestones = {"A": slow, "B": fast, "C": faster}
    stats = {row.label: row for row in sequence_stats(assign_sequences(milestones), milestones)}

    assert stats[SequenceLabel.SEQ5].rank == 1
    assert stats[SequenceLabel.SEQ2].rank == 2
    assert stats[SequenceLabel.SEQ1].rank is None
    assert stats[SequenceLabel.SEQ5].mean_max_duration == 3.25
    assert stats[SequenceLabel.SEQ5].sds[MilestoneKind.ESSENTIAL] == pytest.approx(np.std([2.5, 4.0], ddof=1))
    assert stats[SequenceLabel.SEQ2].note == "InsufficientMembers"
    assert stats[SequenceLabel.SEQ2].sds[MilestoneKind.EVACUATION] is None
    assert stats[SequenceLabel.SEQ2].frequency == pytest.approx(100 / 3)


def test_huber_fit_exact_line():
    x = np.arange(10, dtype=float)
    fit = huber_fit(x, 2.0 + 0.5 * x)
    assert fit.beta0 == pytest.approx(2.0)
    assert fit.beta1 == pytest.approx(0.5)
    assert fit.converged


def test_huber_fit_matches_least_squares_without_outliers():
    rng = np.random.default_rng(3)
    # residuals of +-d at every x leave the least-squares line exact and within c * scale
    x = np.repeat(np.linspace(0.0, 3.0, 20), 2)
    spread = np.repeat(rng.uniform(0.05, 0.1, size=20), 2)
    y = 1.0 + 0.7 * x + np.tile([1.0, -1.0], 20) * spread
    fit = huber_fit(x, y)
    intercept, slope = ols_oracle(list(x), list(y))
    assert (fit.weights == 1.0).all()
    assert fit.beta0 == pytest.approx(intercept, abs=1e-9)
    assert fit.beta1 == pytest.approx(slope, abs=1e-9)


def _contaminated(rng, n=150):
    x = rng.uniform(0, 3, size=n)
    y = 0.1 + 0.7 * x + rng.normal(0, 0.05, size=n)
    outliers = rng.random(n) < 0.1
    y[outliers] += 5.0
    return x, y, outliers


def test_huber_fit_resists_outliers():
    rng = np.random.default_rng(2024)
    hits = 0
    for _ in range(100):
        x, y, _ = _contaminated(rng)
        if abs(huber_fit(x, y).beta1 - 0.7) < 0.05:
            hits += 1
    assert hits >= 95


def test_huber_fit_beats_least_squares_on_late_outliers():
    rng = np.random.default_rng(77)
    wins = 0
    for _ in range(100):
        x = rng.uniform(0, 3, size=150)
        y = 0.1 + 0.7 * x + rng.normal(0, 0.05, size=150)
        late = np.flatnonzero(x > np.median(x))
        y[rng.choice(late, size=15, replace=False)] += 5.0
        _, ols_slope = ols_oracle(list(x), list(y))
        if abs(huber_fit(x, y).beta1 - 0.7) < abs(ols_slope - 0.7):
            wins += 1
    assert wins >= 95


@pytest.mark.parametrize("factor", [3.5, 0.25, -2.0])
def test_huber_fit_is_scale_equivariant(factor):
    x, y, _ = _contaminated(np.random.default_rng(8))
    fit = huber_fit(x, y)
    scaled_y = huber_fit(x, factor * y)
    assert scaled_y.beta0 == pytest.approx(factor * fit.beta0, rel=1e-6, abs=1e-7)
    assert scaled_y.beta1 == pytest.approx(factor * fit.beta1, rel=1e-6, abs=1e-7)
    scaled_x = huber_fit(factor * x, y)
    assert scaled_x.beta0 == pytest.approx(fit.beta0, rel=1e-6, abs=1e-7)
    assert scaled_x.beta1 == pytest.approx(fit.beta1 / factor, rel=1e-6, abs=1e-7)


def test_huber_fit_downweights_outliers():
    x = np.arange(20, dtype=float)
    y = 1.0 + 2.0 * x
    y[5] += 100.0
    fit = huber_fit(x, y)
    assert fit.weights[5] < 0.1
    assert fit.beta1 == pytest.approx(2.0, abs=0.05)


def test_huber_fit_errors():
    with pytest.raises(ConstantRegressor):
        huber_fit([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(TooFewObservations):
        huber_fit([1.0, 2.0], [1.0, 2.0])


@pytest.mark.parametrize("p, stars", [(0.001, "***"), (0.03, "**"), (0.07, "*"), (0.5, "")])
def test_significance_stars(p, stars):
    assert significance_stars(p) == stars


def _planted_assignments(label, count, seed=0):
    rng = np.random.default_rng(seed)
    assignments = []
    for index in range(count):
        lag1 = float(rng.uniform(0.5, 3.0))
        lag2 = 1.5 + 0.6 * lag1 + float(rng.normal(0, 0.05))
        lag3 = 1.0 + 0.8 * lag2 + float(rng.normal(0, 0.05))
        assignments.append(SequenceAssignment(f"{label.value}-{index}", label, lags=LagTriple(lag1, lag2, lag3)))
    return assignments


def test_regression_table(cfg):
    assignments = _planted_assignments(SequenceLabel.SEQ1, 80) + _planted_assignments(SequenceLabel.SEQ2, 2)
    rows = {row.label: row for row in regression_table(assignments, cfg)}
    seq1 = rows[SequenceLabel.SEQ1]
    assert seq1.n == 80
    assert seq1.cells["lag2_on_lag1"].fit.beta1 == pytest.approx(0.6, abs=0.05)
    assert seq1.cells["lag3_on_lag2"].fit.beta1 == pytest.approx(0.8, abs=0.05)
    assert seq1.cells["lag2_on_lag1"].fit.stars == "***"
    assert rows[SequenceLabel.SEQ2].cells["lag2_on_lag1"].note == "InsufficientMembers"
    assert rows[SequenceLabel.SEQ6].n == 0

    pooled = regression_table(assignments, cfg, threads=4)
    assert [row.to_dict() for row in pooled] == [row.to_dict() for row in rows.values()]

    text = format_regression_table(list(rows.values()))
    assert "Constant" in text
    assert "Observations" in text
    assert "***" in text


def test_regression_table_normalized_lags(cfg):
    assignments = _planted_assignments(SequenceLabel.SEQ4, 30)
    rows = {row.label: row for row in regression_table(assignments, cfg, normalize=True)}
    fit = rows[SequenceLabel.SEQ4].cells["lag2_on_lag1"].fit
    assert fit.beta1 > 0


def test_correlation_matrix_listwise():
    columns = {
        "a": [1.0, 2.0, 3.0, 4.0, None],
        "b": [2.0, 4.0, 6.0, 8.0, 10.0],
        "c": [5.0, 5.0, 5.0, 5.0, 5.0],
    }
    matrix = correlation_matrix(columns)
    assert matrix.n == 4
    assert matrix.value("a", "b") == pytest.approx(1.0)
    assert matrix.value("a", "a") == 1.0
    assert matrix.value("a", "c") is None
    assert matrix.value("c", "c") is None

    spearman = correlation_matrix({"a": [1.0, 2.0, 3.0, 4.0], "b": [1.0, 4.0, 9.0, 16.0]}, "spearman")
    assert spearman.value("a", "b") == pytest.approx(1.0)

    with pytest.raises(TooFewObservations):
        correlation_matrix({"a": [1.0, None, 3.0], "b": [1.0, 2.0, 3.0]})


@pytest.mark.parametrize("method", ["pearson", "spearman"])
def test_correlation_of_independent_columns_is_small(method):
    rng = np.random.default_rng(53)
    columns = {name: list(rng.normal(size=500)) for name in ("lag1", "income", "pde")}
    matrix = correlation_matrix(columns, method)
    for first, second in itertools.combinations(columns, 2):
        assert abs(matrix.value(first, second)) < 0.12


def test_lag_summary():
    assignments = [
        SequenceAssignment("A", SequenceLabel.SEQ6, lags=LagTriple(1.0, 2.0, 3.0)),
        SequenceAssignment("B", SequenceLabel.SEQ6, lags=LagTriple(2.0, 3.0, 5.0)),
        SequenceAssignment("C", SequenceLabel.OTHER),
    ]
    summaries = {summary.label: summary for summary in lag_summary(assignments)}
    assert summaries[SequenceLabel.SEQ6].n == 2
    assert summaries[SequenceLabel.SEQ6].means == (1.5, 2.5, 4.0)
    assert summaries[SequenceLabel.SEQ6].sds[2] == pytest.approx(np.sqrt(2.0))
    assert summaries[SequenceLabel.SEQ1].means == (None, None, None)


def test_sequences_csv_round_trip(tmp_path):
    assignments = [
        SequenceAssignment("A", SequenceLabel.SEQ2, lags=LagTriple(1 / 7, 2 / 7, 0.3)),
        SequenceAssignment("B", SequenceLabel.OTHER, reason="censored"),
    ]
    write_sequences(tmp_path / "sequences.csv", assignments)
    again = read_sequences(tmp_path / "sequences.csv")
    assert [(a.unit, a.label, a.lags, a.reason) for a in again] == [
        (a.unit, a.label, a.lags, a.reason) for a in assignments
    ]
