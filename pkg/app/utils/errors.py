"""
Exception hierarchy shared by the services, the HTTP layer and the CLI.
"""
from typing import Optional


class WorkbenchError(Exception):
    """Base class for every error raised by the workbench."""

    error_code: str = "WORKBENCH_ERROR"
    exit_code: int = 2

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ExpressionSyntaxError(WorkbenchError):
    """Malformed expression text; `position` is the 0-based offset of the offending token."""

    error_code = "EXPRESSION_SYNTAX"

    def __init__(self, message: str, position: int, text: Optional[str] = None):
        super().__init__(f"{message} at position {position}")
        self.position = position
        self.text = text


class GeneratorIndexError(WorkbenchError):
    """Generator or coordinate index outside 1..n."""

    error_code = "GENERATOR_INDEX"


class InvalidParameterError(WorkbenchError):
    """Parameter outside its documented range (q, truncation, spectrum samples, ...)."""

    error_code = "INVALID_PARAMETER"


class DimensionMismatchError(WorkbenchError):
    error_code = "DIMENSION_MISMATCH"


class NonHermitianError(WorkbenchError):
    error_code = "NON_HERMITIAN"


class DomainError(WorkbenchError):
    """Operator requested outside the subspace where it is defined."""

    error_code = "DOMAIN_ERROR"


class VanishingConditionError(WorkbenchError):
    """Generator term with a nonzero shift whose function does not vanish on the matching axis."""

    error_code = "VANISHING_CONDITION"


class NotC0Error(WorkbenchError):
    """Generator function failed the decay spot check at large radius."""

    error_code = "NOT_C0"


class ConfigError(WorkbenchError):
    error_code = "CONFIG_ERROR"


class ReportIOError(WorkbenchError):
    """Reading or writing a report, config or matrix file failed."""

    error_code = "IO_ERROR"
    exit_code = 3


class RepresentationError(WorkbenchError):
    """A built operator violates a structural property it must have by construction."""

    error_code = "REPRESENTATION_ERROR"
