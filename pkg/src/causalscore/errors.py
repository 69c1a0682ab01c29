"""Exception types raised across the package.

Two broad families exist: :class:`ConfigError` for bad user input or settings
and :class:`DataError` for problems with the data itself. The CLI maps them to
distinct exit codes.
"""

from __future__ import annotations


class CausalScoreError(Exception):
    """Base class for all package errors."""


class ConfigError(CausalScoreError):
    """Invalid configuration, flags or hyperparameters."""


class DataError(CausalScoreError):
    """Input data violates a contract."""


class _ColumnRowError(DataError):
    def __init__(self, column: str, row: int | None = None, detail: str = ""):
        self.column = column
        self.row = row
        where = f"column {column!r}" + (f", row {row}" if row is not None else "")
        super().__init__(f"{where}{': ' + detail if detail else ''}")


class MissingColumn(_ColumnRowError):
    pass


class NonBinaryTreatment(_ColumnRowError):
    pass


class NonFiniteValue(_ColumnRowError):
    pass


class InvalidPropensity(_ColumnRowError):
    pass


class DegenerateSplit(ConfigError):
    pass


class SingularSystem(DataError):
    pass


class NonBinaryTarget(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class MissingInstrument(DataError):
    pass


class MissingPropensity(DataError):
    pass


class SingleArmTrainingData(DataError):
    pass


class WeakInstrument(DataError):
    pass


class NoMatchedRows(DataError):
    pass


class SingleArm(DataError):
    pass


class SingleInstrumentArm(DataError):
    pass


class EmptySample(DataError):
    pass


class ColumnMismatch(DataError):
    pass


class NoGroundTruth(DataError):
    pass


class InvalidObjective(ConfigError):
    pass


class EmptyBudget(ConfigError):
    pass


class UnknownFamily(ConfigError):
    pass
