import json

import pytest

from recovera.cli import run_cli
from recovera.report import CHART_FILES, REPORT_FILES
from recovera.synth import ScenarioSpec, scenario_to_dict

from .conftest import write_inputs


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    scenario = root / "scenario.json"
    scenario.write_text(json.dumps({"unit_count": 40, "seed": 3}))
    assert run_cli(["gen", "--config", str(scenario), "--out", str(root / "data")]) == 0
    return root


def test_unknown_subcommand_is_a_usage_error(capsys):
    assert run_cli(["frobnicate"]) == 2
    assert run_cli([]) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_flag_values_are_usage_errors(tmp_path):
    assert run_cli(["milestones", "--data", str(tmp_path), "--out", str(tmp_path), "--threads", "0"]) == 2
    assert run_cli(["milestones", "--out", str(tmp_path)]) == 2


def test_missing_input_file(tmp_path, capsys):
    data = write_inputs(tmp_path / "data", income_csv=None)
    code = run_cli(["vuln", "--data", str(data), "--out", str(tmp_path / "out")])
    assert code == 1
    err = capsys.readouterr().err
    assert "MissingFile" in err
    assert str(data / "income.csv") in err


def test_invalid_rows_are_reported(tmp_path, capsys):
    data = write_inputs(tmp_path / "data", evac_csv="date,unit,evacuees,users\n2017-08-01,A,9,4\n")
    assert run_cli(["milestones", "--data", str(data), "--out", str(tmp_path / "out")]) == 1
    assert "row 1" in capsys.readouterr().err


def test_invalid_config(tmp_path, generated):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"activity_threshold": 2.0}))
    args = ["milestones", "--config", str(config), "--data", str(generated / "data"), "--out", str(tmp_path)]
    assert run_cli(args) == 1


def test_infeasible_scenario(tmp_path):
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps(scenario_to_dict(ScenarioSpec(unit_count=1))))
    assert run_cli(["gen", "--config", str(scenario), "--out", str(tmp_path / "data")]) == 1


def test_gen_seed_override(tmp_path, generated):
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps({"unit_count": 40, "seed": 99}))
    assert run_cli(["gen", "--config", str(scenario), "--out", str(tmp_path / "data"), "--seed", "3"]) == 0
    for name in ("visits.csv", "ground_truth.json"):
        assert (tmp_path / "data" / name).read_bytes() == (generated / "data" / name).read_bytes()


def test_report(generated, tmp_path):
    out = tmp_path / "out"
    assert run_cli(["report", "--data", str(generated / "data"), "--out", str(out), "--threads", "3"]) == 0
    assert sorted(path.name for path in out.iterdir()) == sorted(REPORT_FILES + CHART_FILES)
    assert json.loads((out / "metadata.json").read_text())["seed"] == 3


def test_sequences_prints_distribution(generated, tmp_path, capsys):
    assert run_cli(["sequences", "--data", str(generated / "data"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split()[:3] == ["label", "count", "percent"]
    assert "Seq1" in out and "Other" in out
    assert (tmp_path / "sequences.csv").is_file()
    assert (tmp_path / "distribution.csv").is_file()


def test_regress_prints_table(generated, tmp_path, capsys):
    args = ["regress", "--data", str(generated / "data"), "--out", str(tmp_path), "--normalize-lags"]
    assert run_cli(args) == 0
    assert "Lag2 on Lag1" in capsys.readouterr().out
    assert json.loads((tmp_path / "regression.json").read_text())["Seq1"]["n"] >= 0


@pytest.mark.parametrize(
    "command, output",
    [
        ("milestones", "milestones.csv"),
        ("lags", "lags.json"),
        ("vuln", "vulnerability.csv"),
        ("disparity", "disparity.json"),
    ],
)
def test_single_outputs(generated, tmp_path, command, output):
    assert run_cli([command, "--data", str(generated / "data"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / output).is_file()


def test_consecutive_lags_flag(generated, tmp_path):
    cumulative, consecutive = tmp_path / "cumulative", tmp_path / "consecutive"
    data = str(generated / "data")
    assert run_cli(["lags", "--data", data, "--out", str(cumulative)]) == 0
    assert run_cli(["lags", "--data", data, "--out", str(consecutive), "--consecutive-lags"]) == 0
    first = json.loads((cumulative / "lags.json").read_text())
    second = json.loads((consecutive / "lags.json").read_text())
    assert first["Seq1"]["lag1"] == second["Seq1"]["lag1"]
    if first["Seq1"]["n"]:
        assert first["Seq1"]["lag3"]["mean"] > second["Seq1"]["lag3"]["mean"]
