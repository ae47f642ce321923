import json
import math

import pytest

from recovera import __version__
from recovera.milestones import read_milestones
from recovera.model import SequenceLabel, config_hash
from recovera.report import (
    CHART_FILES,
    REPORT_FILES,
    build_report,
    dump_json,
    read_distribution,
    read_seed,
    read_sequence_stats,
    write_bundle,
)
from recovera.trajectory import read_sequences
from recovera.vulnerability import read_vulnerability


@pytest.fixture(scope="module")
def bundle(clean_scenario, clean_dataset):
    directory, spec, _ = clean_scenario
    return build_report(clean_dataset, spec.study, seed=read_seed(directory))


def test_bundle_files(bundle, tmp_path):
    paths = write_bundle(bundle, tmp_path)
    assert [path.name for path in paths] == list(REPORT_FILES + CHART_FILES)
    for path in paths:
        assert path.is_file() and path.stat().st_size > 0
    assert (tmp_path / "distribution.svg").read_text().lstrip().startswith("<?xml")


def test_metadata(bundle, clean_scenario, tmp_path):
    _, spec, truth = clean_scenario
    write_bundle(bundle, tmp_path)
    metadata = json.loads((tmp_path / "metadata.json").read_text())
    assert metadata["version"] == __version__
    assert metadata["seed"] == truth.seed
    assert metadata["units"] == len(truth.units)
    assert metadata["config_hash"] == config_hash(spec.study)
    assert metadata["outcomes"]["moveout"]["recovered"] == len(truth.units)


def test_written_tables_are_readable(bundle, tmp_path):
    write_bundle(bundle, tmp_path)
    assert read_milestones(tmp_path / "milestones.csv").milestones == bundle.milestones.milestones
    assert len(read_sequences(tmp_path / "sequences.csv")) == len(bundle.assignments)
    assert read_vulnerability(tmp_path / "vulnerability.csv") == bundle.profiles

    distribution = read_distribution(tmp_path / "distribution.csv")
    assert distribution["label"].to_list() == [label.value for label in SequenceLabel]
    assert distribution["count"].sum() == len(bundle.assignments)

    stats = read_sequence_stats(tmp_path / "sequence_stats.csv")
    assert stats.height == 6
    assert sorted(r for r in stats["rank"].to_list() if r is not None) == list(
        range(1, stats["rank"].drop_nulls().len() + 1)
    )


def test_regression_json_layout(bundle, tmp_path):
    write_bundle(bundle, tmp_path)
    regression = json.loads((tmp_path / "regression.json").read_text())
    assert set(regression) == {label.value for label in SequenceLabel.canonical()}
    for cells in regression.values():
        assert set(cells) == {"n", "lag2_on_lag1", "lag3_on_lag2"}


def test_disparity_and_crosstab_json(bundle, tmp_path):
    write_bundle(bundle, tmp_path)
    disparity = json.loads((tmp_path / "disparity.json").read_text())
    assert set(disparity) == {"percent_change", "income_by_sequence", "income_by_pde_quantile"}
    by_pde = disparity["income_by_pde_quantile"]
    assert set(by_pde) == {"Q1", "Q2", "Q3", "Q4"}
    assert sum(entry["n"] for entry in by_pde.values()) == sum(
        1 for p in bundle.profiles.values() if p.pde_quantile is not None and p.income is not None
    )
    assert set(disparity["percent_change"]["Seq1"]["lag1"]) == {"upper", "median", "lower"}
    crosstab = json.loads((tmp_path / "crosstab.json").read_text())
    assert [panel["pde_quantile"] for panel in crosstab["panels"]] == ["Q1", "Q4"]


def test_dump_json_replaces_non_finite_values():
    text = dump_json({"b": math.nan, "a": [1.0, math.inf]})
    assert json.loads(text) == {"a": [1.0, None], "b": None}
    assert text.index('"a"') < text.index('"b"')


def test_read_seed_without_ground_truth(tmp_path):
    assert read_seed(tmp_path) is None
