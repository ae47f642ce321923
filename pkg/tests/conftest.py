import datetime as dt
from pathlib import Path

import pytest

from recovera.ingest import parse_dataset
from recovera.model import StudyConfig
from recovera.synth import ScenarioSpec, generate_scenario

LANDFALL = dt.date(2017, 8, 25)

TINY_INPUTS = {
    "visits.csv": """date,unit,category,visits
2017-08-01,A,essential,10
2017-08-01,A,nonessential,5
2017-08-03,A,essential,12
2017-08-03,A,nonessential,6
2017-08-01,B,essential,7
2017-08-03,B,essential,8
""",
    "evac.csv": """date,unit,evacuees,users
2017-08-01,A,2,10
2017-08-02,A,3,10
2017-08-01,B,0,5
""",
    "hometags.csv": """week_start,user,unit
2017-07-30,u1,A
2017-07-30,u2,A
2017-07-30,u3,A
2017-08-06,u1,A
2017-08-06,u2,B
2017-08-06,u3,A
2017-08-13,u1,A
2017-08-13,u3,A
""",
    "claims.csv": """claim_id,source,building_id,unit,damage,property_value
c1,NFIP,b1,A,50000,200000
c2,IA,b1,A,10000,200000
c3,IA,b2,B,20000,100000
c4,NFIP,b3,B,0,150000
""",
    "income.csv": """unit,median_household_income
A,50000
B,70000
""",
}


def write_inputs(directory: Path, **overrides: str) -> Path:
    """Write the tiny input set; keyword names use underscores for dots, e.g. ``visits_csv``."""
    directory.mkdir(parents=True, exist_ok=True)
    contents = dict(TINY_INPUTS)
    for key, text in overrides.items():
        contents[key.replace("_csv", ".csv")] = text
    for name, text in contents.items():
        if text is not None:
            (directory / name).write_text(text, encoding="utf-8")
    return directory


@pytest.fixture
def cfg():
    return StudyConfig()


@pytest.fixture
def tiny_dir(tmp_path):
    return write_inputs(tmp_path / "tiny")


@pytest.fixture(scope="session")
def clean_scenario(tmp_path_factory):
    spec = ScenarioSpec(unit_count=60, seed=11)
    directory = tmp_path_factory.mktemp("clean")
    truth = generate_scenario(spec, directory)
    return directory, spec, truth


@pytest.fixture(scope="session")
def clean_dataset(clean_scenario):
    directory, spec, _ = clean_scenario
    return parse_dataset(directory, spec.study)
