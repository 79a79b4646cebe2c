"""Error types shared across the package.

The CLI maps these onto exit codes: validation/configuration problems
exit with 2, everything else with 3.
"""


class TapqError(Exception):
    """Base class for all package errors."""


class ValidationError(TapqError):
    """Input data violates a documented invariant (bad box, shape mismatch...)."""


class ConfigurationError(TapqError):
    """A config value is out of its legal range or unknown."""


class ParseError(ValidationError):
    """A serialized artifact could not be parsed. Carries a line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CapacityError(ValidationError):
    """More sentinels requested than the vocabulary reserves."""


class TrainingDivergedError(TapqError):
    """Loss became non-finite; a diagnostic dump was written."""
