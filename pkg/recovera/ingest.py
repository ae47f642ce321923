"""Parse, validate and aggregate the five input tables into a Dataset.

Input files (UTF-8 CSV with a header row):

    visits.csv    date,unit,category,visits
    evac.csv      date,unit,evacuees,users
    hometags.csv  week_start,user,unit        (empty unit = no signal that week)
    claims.csv    claim_id,source,building_id,unit,damage,property_value
    income.csv    unit,median_household_income

Every table is read with all columns as strings, then cast column by column
so that a bad value can be reported with its file, row and column.
"""

from __future__ import annotations

import concurrent.futures
import datetime as dt
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import polars as pl

from .errors import (
    DivisionByZeroUsers,
    EvacueesExceedUsers,
    MissingFile,
    NegativeCount,
    SchemaError,
)
from .model import StudyConfig, UnitId

logger = logging.getLogger(__name__)

VISITS_FILE = "visits.csv"
EVAC_FILE = "evac.csv"
HOMETAGS_FILE = "hometags.csv"
CLAIMS_FILE = "claims.csv"
INCOME_FILE = "income.csv"
INPUT_FILES = (VISITS_FILE, EVAC_FILE, HOMETAGS_FILE, CLAIMS_FILE, INCOME_FILE)

CATEGORIES = ("essential", "nonessential")
SOURCES = ("NFIP", "IA")

COLUMNS = {
    VISITS_FILE: ("date", "unit", "category", "visits"),
    EVAC_FILE: ("date", "unit", "evacuees", "users"),
    HOMETAGS_FILE: ("week_start", "user", "unit"),
    CLAIMS_FILE: ("claim_id", "source", "building_id", "unit", "damage", "property_value"),
    INCOME_FILE: ("unit", "median_household_income"),
}

_ROW = "_row"
_DATE_FORMAT = "%Y-%m-%d"


@dataclass(frozen=True)
class Dataset:
    """Validated tables, every series gap-free over its date range.

    visits       date, unit, category, visits, imputed
    evac         date, unit, evacuees, users, rate, imputed
    hometags     week_start, user, unit            (as parsed)
    filled_tags  week_start, user, unit            (carry_forward applied)
    moveout      week_start, unit, movers, population, rate
    claims       claim_id, source, building_id, unit, damage, property_value
    income       unit, median_household_income
    """

    visits: pl.DataFrame
    evac: pl.DataFrame
    hometags: pl.DataFrame
    filled_tags: pl.DataFrame
    moveout: pl.DataFrame
    claims: pl.DataFrame
    income: pl.DataFrame
    roster: tuple[UnitId, ...]

    def equals(self, other: Dataset) -> bool:
        frames = ("visits", "evac", "hometags", "filled_tags", "moveout", "claims", "income")
        return self.roster == other.roster and all(
            getattr(self, name).equals(getattr(other, name)) for name in frames
        )

    def income_for(self, unit: str) -> Optional[int]:
        match = self.income.filter(pl.col("unit") == unit)
        return None if match.is_empty() else int(match["median_household_income"][0])


def _read_table(directory: Path, name: str) -> pl.DataFrame:
    path = directory / name
    if not path.is_file():
        raise MissingFile(path)

    frame = pl.read_csv(path, infer_schema=False, encoding="utf8")
    missing = [column for column in COLUMNS[name] if column not in frame.columns]
    if missing:
        raise SchemaError(name, 0, missing[0], "column missing from header")
    frame = frame.select(COLUMNS[name]).with_row_index(_ROW, offset=1)
    logger.debug("Read %d rows from %s", frame.height, path)
    return frame


def _first_row(frame: pl.DataFrame, condition: pl.Expr) -> Optional[int]:
    bad = frame.filter(condition)
    if bad.is_empty():
        return None
    return int(bad[_ROW].min())


def _require(frame: pl.DataFrame, name: str, columns: tuple[str, ...]) -> None:
    for column in columns:
        row = _first_row(frame, pl.col(column).is_null())
        if row is not None:
            raise SchemaError(name, row, column, "missing value")


def _cast(frame: pl.DataFrame, name: str, column: str, dtype: pl.DataType) -> pl.DataFrame:
    if dtype == pl.Date:
        casted = pl.col(column).str.strip_chars().str.to_date(_DATE_FORMAT, strict=False)
    else:
        casted = pl.col(column).str.strip_chars().cast(dtype, strict=False)
    frame = frame.with_columns(casted.alias("_cast"))
    row = _first_row(frame, pl.col("_cast").is_null() & pl.col(column).is_not_null())
    if row is not None:
        raise SchemaError(name, row, column, f"cannot parse as {dtype}")
    return frame.with_columns(pl.col("_cast").alias(column)).drop("_cast")


def _check_choice(frame: pl.DataFrame, name: str, column: str, allowed: tuple[str, ...]) -> None:
    row = _first_row(frame, ~pl.col(column).is_in(list(allowed)))
    if row is not None:
        raise SchemaError(name, row, column, f"must be one of {', '.join(allowed)}")


def _check_non_negative(frame: pl.DataFrame, name: str, column: str) -> None:
    row = _first_row(frame, pl.col(column) < 0)
    if row is not None:
        raise NegativeCount(name, row, column)


def _date_grid(start: dt.date, end: dt.date, column: str, every: str = "1d") -> pl.DataFrame:
    return pl.date_range(start, end, interval=every, eager=True).alias(column).to_frame()


def _unit_frame(roster: tuple[UnitId, ...]) -> pl.DataFrame:
    return pl.DataFrame({"unit": list(roster)}, schema={"unit": pl.String})


def parse_visits(frame: pl.DataFrame) -> pl.DataFrame:
    _require(frame, VISITS_FILE, COLUMNS[VISITS_FILE])
    frame = _cast(frame, VISITS_FILE, "date", pl.Date)
    frame = _cast(frame, VISITS_FILE, "visits", pl.Int64)
    _check_choice(frame, VISITS_FILE, "category", CATEGORIES)
    _check_non_negative(frame, VISITS_FILE, "visits")
    return frame.group_by(["date", "unit", "category"]).agg(pl.col("visits").sum())


def parse_evac(frame: pl.DataFrame) -> pl.DataFrame:
    _require(frame, EVAC_FILE, COLUMNS[EVAC_FILE])
    frame = _cast(frame, EVAC_FILE, "date", pl.Date)
    frame = _cast(frame, EVAC_FILE, "evacuees", pl.Int64)
    frame = _cast(frame, EVAC_FILE, "users", pl.Int64)
    _check_non_negative(frame, EVAC_FILE, "evacuees")
    _check_non_negative(frame, EVAC_FILE, "users")

    row = _first_row(frame, pl.col("users") == 0)
    if row is not None:
        raise DivisionByZeroUsers(EVAC_FILE, row)
    row = _first_row(frame, pl.col("evacuees") > pl.col("users"))
    if row is not None:
        raise EvacueesExceedUsers(EVAC_FILE, row)

    row = _first_row(frame, pl.struct("date", "unit").is_duplicated())
    if row is not None:
        raise SchemaError(EVAC_FILE, row, "date", "duplicate (date, unit) row")
    return frame.drop(_ROW)


def parse_hometags(frame: pl.DataFrame, anchor: Optional[dt.date] = None) -> pl.DataFrame:
    _require(frame, HOMETAGS_FILE, ("week_start", "user"))
    frame = _cast(frame, HOMETAGS_FILE, "week_start", pl.Date)
    if frame.is_empty():
        return frame.drop(_ROW)

    anchor = anchor or frame["week_start"].min()
    offset = (pl.col("week_start") - pl.lit(anchor)).dt.total_days()
    row = _first_row(frame, (offset % 7 != 0) | (offset < 0))
    if row is not None:
        raise SchemaError(HOMETAGS_FILE, row, "week_start", f"not on the 7-day grid anchored at {anchor}")

    row = _first_row(frame, pl.struct("week_start", "user").is_duplicated())
    if row is not None:
        raise SchemaError(HOMETAGS_FILE, row, "user", "duplicate (week_start, user) row")
    return frame.drop(_ROW).sort(["user", "week_start"])


def parse_claims(frame: pl.DataFrame) -> pl.DataFrame:
    name = CLAIMS_FILE
    _require(frame, name, COLUMNS[name])
    _check_choice(frame, name, "source", SOURCES)
    frame = _cast(frame, name, "damage", pl.Int64)
    frame = _cast(frame, name, "property_value", pl.Int64)
    _check_non_negative(frame, name, "damage")

    row = _first_row(frame, pl.col("property_value") <= 0)
    if row is not None:
        raise SchemaError(name, row, "property_value", "NonPositiveValue: must be > 0")
    row = _first_row(frame, pl.col("claim_id").is_duplicated())
    if row is not None:
        raise SchemaError(name, row, "claim_id", "duplicate claim_id")

    zero = frame.filter(pl.col("damage") == 0).height
    if zero:
        logger.info("Dropped %d zero-damage claims from %s", zero, name)
    return frame.filter(pl.col("damage") > 0).drop(_ROW).sort("claim_id")


def parse_income(frame: pl.DataFrame) -> pl.DataFrame:
    _require(frame, INCOME_FILE, COLUMNS[INCOME_FILE])
    frame = _cast(frame, INCOME_FILE, "median_household_income", pl.Int64)
    _check_non_negative(frame, INCOME_FILE, "median_household_income")
    row = _first_row(frame, pl.col("unit").is_duplicated())
    if row is not None:
        raise SchemaError(INCOME_FILE, row, "unit", "more than one row for unit")
    return frame.drop(_ROW).sort("unit")


def complete_visits(visits: pl.DataFrame, roster: tuple[UnitId, ...]) -> pl.DataFrame:
    """Fill every (unit, category, day) gap with an imputed zero."""
    schema = {"date": pl.Date, "unit": pl.String, "category": pl.String, "visits": pl.Int64, "imputed": pl.Boolean}
    if visits.is_empty() or not roster:
        return pl.DataFrame(schema=schema)

    grid = (
        _unit_frame(roster)
        .join(pl.DataFrame({"category": list(CATEGORIES)}), how="cross")
        .join(_date_grid(visits["date"].min(), visits["date"].max(), "date"), how="cross")
    )
    filled = grid.join(visits, on=["date", "unit", "category"], how="left").with_columns(
        pl.col("visits").is_null().alias("imputed"),
        pl.col("visits").fill_null(0),
    )
    return filled.select(list(schema)).sort(["unit", "category", "date"])


def evac_rate_series(records: pl.DataFrame, roster: Optional[tuple[UnitId, ...]] = None) -> pl.DataFrame:
    """Daily evacuation rate per unit; gap days are imputed with an undefined rate."""
    schema = {
        "date": pl.Date,
        "unit": pl.String,
        "evacuees": pl.Int64,
        "users": pl.Int64,
        "rate": pl.Float64,
        "imputed": pl.Boolean,
    }
    if records.is_empty():
        return pl.DataFrame(schema=schema)

    units = roster if roster is not None else tuple(sorted(records["unit"].unique().to_list()))
    grid = _unit_frame(units).join(
        _date_grid(records["date"].min(), records["date"].max(), "date"), how="cross"
    )
    series = grid.join(records.select("date", "unit", "evacuees", "users"), on=["date", "unit"], how="left")
    series = series.with_columns(
        (pl.col("evacuees") / pl.col("users")).alias("rate"),
        pl.col("users").is_null().alias("imputed"),
    )
    return series.select(list(schema)).sort(["unit", "date"])


def carry_forward(tags: pl.DataFrame, anchor: Optional[dt.date] = None) -> pl.DataFrame:
    """Fill each user's missing weekly home tag with the last observed one.

    The table is completed over the weekly grid first, so weeks without a row
    count as absent. Weeks before a user's first observation stay empty.
    """
    schema = {"week_start": pl.Date, "user": pl.String, "unit": pl.String}
    if tags.is_empty():
        return pl.DataFrame(schema=schema)

    start = anchor or tags["week_start"].min()
    weeks = _date_grid(start, tags["week_start"].max(), "week_start", every="7d")
    grid = tags.select("user").unique().join(weeks, how="cross")
    filled = (
        grid.join(tags.select("week_start", "user", "unit"), on=["week_start", "user"], how="left")
        .sort(["user", "week_start"])
        .with_columns(pl.col("unit").forward_fill().over("user"))
    )
    return filled.select(list(schema))


def moveout_rates(filled: pl.DataFrame, roster: Optional[tuple[UnitId, ...]] = None) -> pl.DataFrame:
    """Weekly share of a unit's previous-week residents whose home unit changed."""
    schema = {
        "week_start": pl.Date,
        "unit": pl.String,
        "movers": pl.Int64,
        "population": pl.Int64,
        "rate": pl.Float64,
    }
    if filled.is_empty():
        return pl.DataFrame(schema=schema)

    paired = (
        filled.sort(["user", "week_start"])
        .with_columns(pl.col("unit").shift(1).over("user").alias("prev_unit"))
        .filter(pl.col("prev_unit").is_not_null())
    )
    counts = paired.group_by(["week_start", "prev_unit"]).agg(
        pl.len().cast(pl.Int64).alias("population"),
        (pl.col("unit") != pl.col("prev_unit")).sum().cast(pl.Int64).alias("movers"),
    )

    units = roster if roster is not None else tuple(sorted(filled["unit"].drop_nulls().unique().to_list()))
    weeks = filled.select("week_start").unique().sort("week_start").slice(1)
    grid = _unit_frame(units).join(weeks, how="cross")
    rates = grid.join(
        counts.rename({"prev_unit": "unit"}), on=["week_start", "unit"], how="left"
    ).with_columns(
        pl.col("population").fill_null(0),
        pl.col("movers").fill_null(0),
    )
    rates = rates.with_columns(
        pl.when(pl.col("population") > 0)
        .then(pl.col("movers") / pl.col("population"))
        .otherwise(None)
        .alias("rate")
    )
    return rates.select(list(schema)).sort(["unit", "week_start"])


def _roster(*columns: pl.Series) -> tuple[UnitId, ...]:
    units: set[str] = set()
    for column in columns:
        units.update(column.drop_nulls().unique().to_list())
    return tuple(UnitId(unit) for unit in sorted(units))


def parse_dataset(directory: Path | str, cfg: StudyConfig, threads: int = 1) -> Dataset:
    directory = Path(directory)
    for name in INPUT_FILES:
        if not (directory / name).is_file():
            raise MissingFile(directory / name)

    parsers: dict[str, Callable[[pl.DataFrame], pl.DataFrame]] = {
        VISITS_FILE: parse_visits,
        EVAC_FILE: parse_evac,
        HOMETAGS_FILE: lambda frame: parse_hometags(frame, cfg.week_anchor),
        CLAIMS_FILE: parse_claims,
        INCOME_FILE: parse_income,
    }

    def load(name: str) -> pl.DataFrame:
        return parsers[name](_read_table(directory, name))

    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
            tables = dict(zip(INPUT_FILES, executor.map(load, INPUT_FILES)))
    else:
        tables = {name: load(name) for name in INPUT_FILES}

    visits = tables[VISITS_FILE]
    evac = tables[EVAC_FILE]
    hometags = tables[HOMETAGS_FILE]
    claims = tables[CLAIMS_FILE]
    income = tables[INCOME_FILE]

    roster = _roster(visits["unit"], evac["unit"], hometags["unit"], claims["unit"], income["unit"])
    filled = carry_forward(hometags, cfg.week_anchor)
    dataset = Dataset(
        visits=complete_visits(visits, roster),
        evac=evac_rate_series(evac, roster),
        hometags=hometags,
        filled_tags=filled,
        moveout=moveout_rates(filled, roster),
        claims=claims,
        income=income,
        roster=roster,
    )

    imputed_visits = int(dataset.visits["imputed"].sum() or 0)
    imputed_evac = int(dataset.evac["imputed"].sum() or 0)
    logger.info(
        "Parsed %s: %d units, %d visit days (%d imputed), %d evacuation days (%d imputed), %d claims",
        directory,
        len(roster),
        dataset.visits.height,
        imputed_visits,
        dataset.evac.height,
        imputed_evac,
        claims.height,
    )
    return dataset


def write_dataset(dataset: Dataset, directory: Path | str) -> None:
    """Serialize the observed (non-imputed) records back to the five input CSVs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    visits = dataset.visits.filter(~pl.col("imputed")).select(COLUMNS[VISITS_FILE])
    evac = dataset.evac.filter(~pl.col("imputed")).select(COLUMNS[EVAC_FILE])
    visits.sort(["date", "unit", "category"]).write_csv(directory / VISITS_FILE)
    evac.sort(["date", "unit"]).write_csv(directory / EVAC_FILE)
    dataset.hometags.select(COLUMNS[HOMETAGS_FILE]).write_csv(directory / HOMETAGS_FILE)
    dataset.claims.select(COLUMNS[CLAIMS_FILE]).write_csv(directory / CLAIMS_FILE)
    dataset.income.select(COLUMNS[INCOME_FILE]).write_csv(directory / INCOME_FILE)
    logger.info("Wrote dataset to %s", directory)
