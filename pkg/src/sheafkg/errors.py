"""Exception hierarchy shared by all sheafkg modules.

Three top-level categories map onto the CLI exit codes: usage errors
(exit 1), data errors (exit 2), and numeric errors (exit 3).
"""


class SheafKGError(Exception):
    """Base class for all library errors."""


class UsageError(SheafKGError):
    """Invalid arguments, configs, or call sequences."""

    exit_code = 1


class DataError(SheafKGError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class NumericError(SheafKGError):
    """Non-finite values or numerically failed solves."""

    exit_code = 3


class ParseError(DataError):
    """A line in an input file could not be parsed."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class UnknownSymbolError(DataError):
    """A label was not found in a frozen vocabulary."""


class SchemaError(DataError):
    """Relation vocabularies or representations do not line up."""


class CoverageError(DataError):
    """An id set refers to entities outside the covered universe."""


class DimensionError(UsageError):
    """Embedding dimensions are inconsistent or unsupported."""


class ShapeError(UsageError):
    """Query shape arity mismatch."""


class SizeGuardError(UsageError):
    """A dense solve was requested above the configured size limit."""


class UndefinedMetricError(UsageError):
    """A metric was requested over an empty record set."""


class DivergenceError(NumericError):
    """Iterative diffusion increased the energy repeatedly."""
