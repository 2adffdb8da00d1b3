"""
Exception hierarchy for the maneuver-design pipeline.

Every failure surfaced by the package derives from
[`CamException`][convex_cam.exceptions.CamException]; numerical failures raised by numpy/scipy
are chained into package exceptions with the `catch_*` context managers.
"""
from contextlib import contextmanager
from typing import Any, Iterator, Optional

import numpy as np

from convex_cam.logging import get_logger

__all__ = [
    "CamException",
    "ConeSolverError",
    "ConjunctionError",
    "DegenerateGeometryError",
    "DimensionMismatchError",
    "DirectImpactError",
    "DynamicsError",
    "EventValidationError",
    "GridTooShortError",
    "InputError",
    "InvalidThresholdError",
    "NoConvergenceError",
    "NonFiniteError",
    "NotPositiveDefiniteError",
    "OptimizationError",
    "ParseError",
    "QuadratureNonConvergenceError",
    "ReportError",
    "SaddlePointError",
    "StepSizeUnderflowError",
    "catch_io_error",
    "catch_numerical_error",
    "exit_code_for",
    "EXIT_OK",
    "EXIT_INFEASIBLE",
    "EXIT_PARSE_ERROR",
    "EXIT_NUMERICAL_FAILURE",
]

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_PARSE_ERROR = 3
EXIT_NUMERICAL_FAILURE = 4


class CamException(Exception):
    """
    Base exception type.
    """

    exit_code: int = EXIT_NUMERICAL_FAILURE


class DynamicsError(CamException):
    """
    Raised when a trajectory cannot be propagated.
    """


class NonFiniteError(DynamicsError):
    """
    A state, derivative or matrix contains NaN or infinite entries.
    """


class StepSizeUnderflowError(DynamicsError):
    """
    The adaptive integrator required a step smaller than the floating point spacing.
    """


class ConjunctionError(CamException):
    """
    Base type for encounter geometry and probability failures.
    """


class DegenerateGeometryError(ConjunctionError):
    """
    The encounter frame or an orbital frame is undefined for the given vectors.
    """


class NotPositiveDefiniteError(ConjunctionError):
    """
    A covariance failed its Cholesky factorization.
    """


class DirectImpactError(ConjunctionError):
    """
    The maximum-probability bound diverges because the Mahalanobis distance is zero.
    """


class QuadratureNonConvergenceError(ConjunctionError):
    """
    The probability integral did not reach its tolerance within the refinement budget.
    """


class SaddlePointError(ConjunctionError):
    """
    The closest-approach search converged to a maximum of the separation.
    """


class InvalidThresholdError(ConjunctionError):
    """
    The requested threshold cannot be reached by any encounter geometry.
    """


class NoConvergenceError(CamException):
    """
    An iterative scheme exhausted its iteration budget.
    """


class OptimizationError(CamException):
    """
    Base type for failures while assembling or solving maneuver subproblems.
    """


class GridTooShortError(OptimizationError):
    """
    The maneuver window does not hold a single grid node.
    """


class DimensionMismatchError(OptimizationError):
    """
    Matrices handed to the subproblem assembly disagree in shape.
    """


class ConeSolverError(OptimizationError):
    """
    The conic solver stopped without an optimal point or an infeasibility certificate.
    """

    def __init__(self, message: str, status: Optional[str] = None) -> None:
        super().__init__(message)
        self.status = status


class InputError(CamException):
    """
    Base type for malformed input files and records.
    """

    exit_code = EXIT_PARSE_ERROR


class ParseError(InputError):
    """
    A file does not follow the documented grammar.
    """

    def __init__(self, message: str, *, path: Any = None, line: Optional[int] = None, field: Optional[str] = None):
        location = []
        if path is not None:
            location.append(str(path))
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        prefix = f"{':'.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")
        self.path = path
        self.line = line
        self.field = field


class EventValidationError(InputError):
    """
    A parsed record violates an event invariant.
    """

    def __init__(self, record_id: str, message: str, line: Optional[int] = None) -> None:
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"event '{record_id}'{where}: {message}")
        self.record_id = record_id
        self.line = line


class ReportError(CamException):
    """
    Report files could not be written.
    """


def exit_code_for(exc: BaseException) -> int:
    """
    Maps an exception to the process exit code used by the command line.

    Parameters
    ----------
    exc : BaseException
        The exception that terminated a command.

    Returns
    -------
    int
    """
    if isinstance(exc, CamException):
        return exc.exit_code
    return EXIT_NUMERICAL_FAILURE


@contextmanager
def catch_numerical_error(message: str) -> Iterator[None]:
    """
    Context manager that raises a package exception chained from a numpy/scipy linear algebra
    failure or a floating point error.
    """
    try:
        yield
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(f"{message}: {e}") from e
    except FloatingPointError as e:
        raise NonFiniteError(f"{message}: {e}") from e


@contextmanager
def catch_io_error(message: str) -> Iterator[None]:
    """
    Context manager that wraps operating system errors raised while reading or writing files.
    """
    try:
        yield
    except OSError as e:
        logger.error("%s", message, exc_info=e)
        raise ReportError(f"{message}: {e}") from e
