"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps these onto exit codes: configuration problems exit with 2, data
validation problems with 3 and numeric divergence with 4.
"""


class CropSynthError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(CropSynthError):
    exit_code = 2


class ValidationError(CropSynthError, ValueError):
    exit_code = 3


class SchemaError(ValidationError):
    """Input file could not be parsed into the expected layout."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class GapError(ValidationError):
    pass


class OrderingError(ValidationError):
    pass


class AlignmentError(ValidationError):
    pass


class DegenerateClimateError(ValidationError):
    """Too little data in a station/month to fit a weather-generator component."""


class UndefinedScoreError(ValidationError):
    """F1 requested for a tally with no mass at all."""


class DivergenceError(CropSynthError, ArithmeticError):
    """Training produced a non-finite loss.

    ``checkpoint`` holds the last finite training state when one exists.
    """

    exit_code = 4

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
