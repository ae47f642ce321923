"""Exceptions raised by recovera.

Configuration and data-validation errors abort a run (the CLI maps them to
exit code 1). Analysis errors are raised by the low-level operations and are
turned into per-unit reason codes or per-cell notes by the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class RecoveraError(Exception):
    """Base class for every error raised by the package."""


@dataclass(frozen=True)
class ConfigIssue:
    code: str
    detail: str

    def __str__(self) -> str:
        return f"{self.code}: {self.detail}"


class ConfigError(RecoveraError):
    def __init__(self, issues: list[ConfigIssue]):
        self.issues = list(issues)
        super().__init__("; ".join(str(issue) for issue in self.issues))

    @property
    def codes(self) -> set[str]:
        return {issue.code for issue in self.issues}


class DataError(RecoveraError):
    """Problems with input files or records."""


class MissingFile(DataError):
    def __init__(self, path: Path | str):
        self.path = Path(path)
        super().__init__(f"MissingFile: {self.path}")


class SchemaError(DataError):
    def __init__(self, file: str, row: int, column: str, reason: str):
        self.file = file
        self.row = row
        self.column = column
        self.reason = reason
        super().__init__(f"{file}: row {row}, column '{column}': {reason}")


class NegativeCount(SchemaError):
    def __init__(self, file: str, row: int, column: str):
        super().__init__(file, row, column, "NegativeCount: value must be >= 0")


class EvacueesExceedUsers(SchemaError):
    def __init__(self, file: str, row: int):
        super().__init__(file, row, "evacuees", "EvacueesExceedUsers")


class DivisionByZeroUsers(SchemaError):
    def __init__(self, file: str, row: int):
        super().__init__(file, row, "users", "DivisionByZeroUsers: users must be > 0")


class NonPositiveValue(DataError):
    def __init__(self, what: str, value: float):
        self.what = what
        self.value = value
        super().__init__(f"NonPositiveValue: {what} must be > 0, got {value}")


class AnalysisError(RecoveraError):
    """Raised by statistical operations on unsuitable input."""


class ConstantRegressor(AnalysisError):
    pass


class TooFewObservations(AnalysisError):
    pass


class TooFewValues(AnalysisError):
    pass


class InsufficientMembers(AnalysisError):
    pass


class CensoredMilestone(AnalysisError):
    pass


class EmptyWindow(AnalysisError):
    pass


class InfeasibleSpec(RecoveraError):
    pass
