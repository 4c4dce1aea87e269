"""Exception types shared across the package."""


class TodstepError(Exception):
    """Base class for all package errors."""


class SchemaFormatError(TodstepError):
    """A schema or database document could not be parsed."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class ValidationError(TodstepError):
    """A document parsed but violates an invariant."""


class DomainNotFoundError(TodstepError):
    """A referenced domain does not exist in the schema or database."""


class MalformedSequenceError(TodstepError):
    """A token sequence is missing required markers."""


class EvaluationError(TodstepError):
    """A metric is undefined for the given corpus."""


class ConfigError(TodstepError):
    """A configuration value is out of range or inconsistent."""


class GenerationError(TodstepError):
    """A corpus cannot be generated under the given configuration."""
