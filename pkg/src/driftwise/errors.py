"""Exception hierarchy shared by every driftwise module."""

from __future__ import annotations


class DriftwiseError(Exception):
    """Base class for all library errors."""


class InvalidInputError(DriftwiseError, ValueError):
    """A vector, matrix or scalar argument violates its documented contract."""


class InvalidTaskError(InvalidInputError):
    pass


class InvalidStepError(InvalidInputError):
    """A time index outside ``1..T`` was requested from a schedule."""


class CoverageError(DriftwiseError):
    """A hold-out set is missing at least one class."""

    def __init__(self, missing):
        self.missing = tuple(int(c) for c in missing)
        names = ", ".join(str(c) for c in self.missing)
        super().__init__(f"hold-out set has no samples of class(es) {names} (0-based)")


class EstimationError(DriftwiseError):
    """The base confusion matrix cannot be inverted reliably."""

    def __init__(self, message, condition_number=float("nan")):
        self.condition_number = float(condition_number)
        super().__init__(f"{message} (condition number {self.condition_number:.3g})")


class DegenerateWeightError(DriftwiseError):
    """The re-weighting normaliser vanished for some sample."""


class AdapterFault(DriftwiseError):
    """An adapter produced a non-finite update; the run must be aborted."""


class ParseError(DriftwiseError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class ValidationError(ParseError):
    """A syntactically valid row carries an invalid probability vector."""


class ConfigError(DriftwiseError):
    pass
