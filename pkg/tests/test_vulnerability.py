import logging
from dataclasses import replace

import numpy as np
import polars as pl
import pytest

from recovera.errors import NonPositiveValue, TooFewValues
from recovera.ingest import parse_dataset
from recovera.model import SequenceLabel
from recovera.trajectory import LagTriple, SequenceAssignment
from recovera.vulnerability import (
    LOWER,
    MEDIAN,
    UPPER,
    VulnerabilityProfile,
    income_by_pde_quantile,
    income_by_sequence,
    income_group,
    lag_percent_change,
    merge_claims,
    minmax_normalize,
    pde_raw,
    pde_scores,
    quantile_breaks,
    read_vulnerability,
    sequence_by_quantile,
    unit_profiles,
    write_vulnerability,
)


def _claims(rows):
    return pl.DataFrame(
        rows,
        schema={
            "claim_id": pl.String,
            "source": pl.String,
            "building_id": pl.String,
            "unit": pl.String,
            "damage": pl.Int64,
            "property_value": pl.Int64,
        },
        orient="row",
    )


def test_merge_claims_prefers_nfip_and_sums_splits(caplog):
    claims = _claims(
        [
            ("c1", "NFIP", "b1", "A", 30000, 200000),
            ("c2", "NFIP", "b1", "A", 20000, 210000),
            ("c3", "IA", "b1", "A", 9000, 200000),
            ("c4", "IA", "b2", "A", 4000, 90000),
        ]
    )
    with caplog.at_level(logging.WARNING):
        merged = merge_claims(claims)
    rows = {row["building_id"]: row for row in merged.iter_rows(named=True)}
    assert rows["b1"]["source_used"] == "NFIP"
    assert rows["b1"]["damage"] == 50000
    assert rows["b1"]["property_value"] == 210000
    assert rows["b1"]["claims"] == 2
    assert rows["b2"]["source_used"] == "IA"
    assert "ConflictingPropertyValue" in caplog.text


@pytest.mark.parametrize(
    "damage, value, source, expected",
    [
        (600000, 300000, "NFIP", 500000 / 300000),
        (100000, 400000, "NFIP", 0.25),
        (70000, 100000, "IA", 0.5),
        (20000, 100000, "IA", 0.2),
    ],
)
def test_pde_raw_caps_damage(cfg, damage, value, source, expected):
    assert pde_raw(damage, value, source, cfg) == pytest.approx(expected)


def test_pde_raw_rejects_non_positive(cfg):
    with pytest.raises(NonPositiveValue):
        pde_raw(100, 0, "NFIP", cfg)
    with pytest.raises(NonPositiveValue):
        pde_raw(0, 100, "IA", cfg)


def test_minmax_normalize():
    assert minmax_normalize([2.0, 4.0, 3.0]).tolist() == [0.0, 1.0, 0.5]
    assert minmax_normalize([7.0, 7.0]).tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        minmax_normalize([])


def test_pde_scores_per_source_normalization(cfg):
    claims = _claims(
        [
            ("c1", "NFIP", "b1", "A", 10000, 100000),
            ("c2", "NFIP", "b2", "A", 50000, 100000),
            ("c3", "IA", "b3", "B", 1000, 100000),
            ("c4", "IA", "b4", "B", 2000, 100000),
        ]
    )
    pooled = {score.building_id: score.normalized for score in pde_scores(claims, cfg)}
    assert pooled["b2"] == 1.0
    assert pooled["b3"] == 0.0
    per_source = {
        score.building_id: score.normalized
        for score in pde_scores(claims, replace(cfg, pde_normalization="per_source"))
    }
    assert per_source == {"b1": 0.0, "b2": 1.0, "b3": 0.0, "b4": 1.0}


def test_quantile_classes_have_equal_sizes():
    breaks = quantile_breaks(np.arange(1, 101, dtype=float), 4)
    assert breaks.k == 4
    assert [breaks.labels.count(label) for label in range(1, 5)] == [25, 25, 25, 25]


def test_quantile_boundaries_go_up_and_ties_go_low():
    breaks = quantile_breaks([0.0, 1.0, 2.0, 3.0, 4.0], 4)
    assert breaks.breaks == (0.0, 1.0, 2.0, 3.0, 4.0)
    assert breaks.labels == (1, 2, 3, 4, 4)

    tied = quantile_breaks([0.0, 0.0, 0.0, 0.0, 0.0, 1.0], 4)
    assert tied.classify(0.0) == 1
    assert tied.classify(1.0) == 4


def test_quantile_breaks_needs_enough_values():
    with pytest.raises(TooFewValues):
        quantile_breaks([1.0, 2.0], 4)


@pytest.mark.parametrize("quantile, group", [(4, UPPER), (1, LOWER), (2, MEDIAN), (3, MEDIAN), (None, None)])
def test_income_group(quantile, group):
    assert income_group(quantile, 4) == group


def test_unit_profiles_without_enough_units(tiny_dir, cfg, caplog):
    ds = parse_dataset(tiny_dir, cfg)
    with caplog.at_level(logging.WARNING):
        profiles = unit_profiles(ds, cfg)
    assert set(profiles) == {"A", "B"}
    assert profiles["A"].income == 50000
    assert profiles["A"].pde_quantile is None
    assert "No income quantiles" in caplog.text

    two = unit_profiles(ds, replace(cfg, income_quantile_count=2))
    assert two["A"].income_quantile == 1
    assert two["B"].income_quantile == 2


def test_unit_profiles_use_unit_statistic(tiny_dir, cfg):
    ds = parse_dataset(tiny_dir, cfg)
    profiles = unit_profiles(ds, cfg)
    # b1 is NFIP 50000/200000, b2 is IA 20000/100000
    assert profiles["A"].pde == 1.0
    assert profiles["B"].pde == 0.0


def _profiles(incomes, k=4):
    breaks = quantile_breaks(list(incomes.values()), k)
    return {
        unit: VulnerabilityProfile(unit, 0.0, income, 1 if index % 2 else k, label)
        for index, ((unit, income), label) in enumerate(zip(incomes.items(), breaks.labels))
    }


def _assignments(lags):
    return [
        SequenceAssignment(unit, SequenceLabel.SEQ1, lags=LagTriple(lag, lag + 1.0, lag + 2.0))
        for unit, lag in lags.items()
    ]


def test_lag_percent_change_matches_brute_force():
    rng = np.random.default_rng(8)
    units = [f"U{i:02d}" for i in range(40)]
    incomes = {unit: int(v) for unit, v in zip(units, rng.integers(20000, 120000, size=40))}
    lags = {unit: float(v) for unit, v in zip(units, rng.uniform(0.5, 3.0, size=40))}
    profiles = _profiles(incomes)
    table = lag_percent_change(_assignments(lags), profiles, 4)

    overall = np.mean(list(lags.values()))
    for group, quantiles in ((UPPER, {4}), (LOWER, {1}), (MEDIAN, {2, 3})):
        members = [lags[u] for u in units if profiles[u].income_quantile in quantiles]
        expected = 100.0 * (np.mean(members) - overall) / overall
        assert table.change(SequenceLabel.SEQ1, "lag1", group) == pytest.approx(expected)
    assert table.counts["Seq1"]["all"] == 40
    assert table.change(SequenceLabel.SEQ3, "lag1", UPPER) is None


def test_income_by_sequence():
    incomes = {f"U{i}": 10000 * (i + 1) for i in range(8)}
    profiles = _profiles(incomes)
    summary = income_by_sequence(_assignments({unit: 1.0 for unit in incomes}), profiles, 4)
    assert summary["Seq1"][LOWER]["n"] == 2
    assert summary["Seq1"][LOWER]["mean"] == 15000.0
    assert summary["Seq1"][UPPER]["mean"] == 75000.0
    assert summary["Seq2"][UPPER]["n"] == 0


def test_sequence_by_quantile_panels():
    incomes = {f"U{i}": 10000 * (i + 1) for i in range(8)}
    profiles = _profiles(incomes)
    panels = sequence_by_quantile(_assignments({unit: 1.0 for unit in incomes}), profiles, 4)
    assert [panel.pde_quantile for panel in panels] == [1, 4]
    assert sum(panel.total for panel in panels) == 8
    low = panels[0]
    assert sum(low.counts[SequenceLabel.SEQ1]) == low.total
    assert low.expected == low.total / 4
    assert low.to_dict()["pde_quantile"] == "Q1"


def test_vulnerability_csv_round_trip(tmp_path):
    profiles = {
        "A": VulnerabilityProfile("A", 0.125, 50000, 1, 2),
        "B": VulnerabilityProfile("B", 1 / 3, None, 4, None),
    }
    write_vulnerability(tmp_path / "vulnerability.csv", profiles)
    assert read_vulnerability(tmp_path / "vulnerability.csv") == profiles


def test_income_by_pde_quantile():
    profiles = {
        f"U{i}": VulnerabilityProfile(f"U{i}", i / 10, 10000 * (i + 1), i // 2 + 1, None) for i in range(6)
    }
    profiles["U6"] = VulnerabilityProfile("U6", 0.9, None, 3, None)
    summary = income_by_pde_quantile(profiles, 4)
    assert list(summary) == ["Q1", "Q2", "Q3", "Q4"]
    assert summary["Q1"] == {"mean": 15000.0, "q25": 12500.0, "q75": 17500.0, "n": 2}
    assert summary["Q3"]["n"] == 2
    assert summary["Q3"]["mean"] == 55000.0
    assert summary["Q4"] == {"mean": None, "q25": None, "q75": None, "n": 0}


def _random_claims(rng, count):
    buildings = max(1, count // 3)
    rows = []
    for index in range(count):
        building = int(rng.integers(0, buildings))
        source = "NFIP" if rng.random() < 0.5 else "IA"
        damage = int(rng.integers(1, 700_000))
        rows.append((f"c{index:04d}", source, f"b{building:04d}", f"U{building % 7}", damage, 1000 * (100 + building)))
    return rows


def test_pde_scores_match_brute_force(cfg):
    rows = _random_claims(np.random.default_rng(61), 1000)
    by_building = {}
    for _, source, building, _, damage, value in rows:
        by_building.setdefault(building, []).append((source, damage, value))
    raws = {}
    for building, claims in by_building.items():
        used = [claim for claim in claims if claim[0] == "NFIP"] or claims
        cap = cfg.nfip_cap if used[0][0] == "NFIP" else cfg.ia_cap
        raws[building] = min(sum(claim[1] for claim in used), cap) / max(claim[2] for claim in used)
    low, high = min(raws.values()), max(raws.values())

    scores = pde_scores(_claims(rows), cfg)
    assert len(scores) == len(raws)
    for score in scores:
        assert score.raw == pytest.approx(raws[score.building_id])
        assert score.normalized == pytest.approx((raws[score.building_id] - low) / (high - low))


def test_pde_raw_capping_is_idempotent_and_monotone(cfg):
    rng = np.random.default_rng(67)
    for _ in range(500):
        source = "NFIP" if rng.random() < 0.5 else "IA"
        cap = cfg.nfip_cap if source == "NFIP" else cfg.ia_cap
        value = float(rng.integers(50_000, 500_000))
        low, high = sorted(float(d) for d in rng.integers(1, 800_000, size=2))
        assert pde_raw(min(high, cap), value, source, cfg) == pde_raw(high, value, source, cfg)
        assert pde_raw(low, value, source, cfg) <= pde_raw(high, value, source, cfg)


def test_ia_claims_on_nfip_buildings_change_nothing():
    rng = np.random.default_rng(71)
    rows = _random_claims(rng, 300)
    merged = merge_claims(_claims(rows))
    nfip = sorted({row[2] for row in rows if row[1] == "NFIP"})
    units = {row[2]: (row[3], row[5]) for row in rows}
    extra = [
        (f"x{index:04d}", "IA", building, units[building][0], int(rng.integers(1, 80_000)), units[building][1])
        for index, building in enumerate(nfip)
    ]
    assert merge_claims(_claims(rows + extra)).equals(merged)
