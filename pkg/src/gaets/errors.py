"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, numeric failures exit 4.
"""


class GaetsError(Exception):
    """Base class for all library errors."""


class SchemaError(GaetsError):
    """A required CSV column is missing or duplicated."""


class ParseError(GaetsError):
    """A CSV cell could not be parsed as a finite number.

    Carries the 1-based file line number of the offending row.
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (line {line})")
        self.line = line


class EmptyInputError(GaetsError):
    """An input file or dataset contains no data."""


class DegenerateVariableError(GaetsError):
    """A variable has zero variance and cannot be z-scored."""

    def __init__(self, variable: str):
        super().__init__(
            f"variable {variable!r} has zero variance; drop it or keep it unscaled"
        )
        self.variable = variable


class ConfigurationError(GaetsError):
    """Invalid or inconsistent configuration values."""


class DimensionError(GaetsError):
    """Array shapes do not conform."""


class NumericError(GaetsError):
    """A computation produced non-finite values."""
