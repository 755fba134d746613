"""
Error handling system for MirrorBot.

This module provides the exception hierarchy shared by the simulator, the
fusion pipeline, the agent and judge loops, the structural model and the
command line, together with machine-readable error rendering.
"""

import logging
from typing import Dict, Any, Optional
from enum import Enum


logger = logging.getLogger(__name__)


class ErrorCode(str, Enum):
    """Standardized error codes for consistent error handling."""

    # Validation errors
    VALIDATION_ERROR = "validation_error"
    CONFIG_ERROR = "config_error"

    # Simulation and fusion errors
    INSUFFICIENT_HISTORY = "insufficient_history"
    MALFORMED_SCAN = "malformed_scan"
    NEGATIVE_TIME = "negative_time"
    OUT_OF_ORDER_SAMPLE = "out_of_order_sample"

    # Model backend errors
    MALFORMED_RESPONSE = "malformed_response"
    BACKEND_UNAVAILABLE = "backend_unavailable"
    BACKEND_TIMEOUT = "backend_timeout"
    BACKEND_HTTP_ERROR = "backend_http_error"
    AUTH_MISSING = "auth_missing"
    NETWORK_ERROR = "network_error"
    REPLAY_EXHAUSTED = "replay_exhausted"

    # Judge errors
    MALFORMED_SCORE = "malformed_score"
    EMPTY_RUN = "empty_run"
    NON_POSITIVE_DIMENSION = "non_positive_dimension"

    # Structural model errors
    ZERO_VARIANCE = "zero_variance"
    SINGULAR_STRUCTURE = "singular_structure"
    NOT_POSITIVE_DEFINITE = "not_positive_definite"
    NON_CONVERGENCE = "non_convergence"
    HESSIAN_NOT_PD = "hessian_not_pd"
    ZERO_DF = "zero_df"
    INSUFFICIENT_DATA = "insufficient_data"

    # Runner errors
    MISSING_SCORES = "missing_scores"
    RUN_NOT_FOUND = "run_not_found"
    STORAGE_ERROR = "storage_error"
    INTERNAL_ERROR = "internal_error"


# sysexits-style process exit codes
EXIT_USAGE = 2
EXIT_DATA = 65
EXIT_NO_INPUT = 66
EXIT_UNAVAILABLE = 69
EXIT_SOFTWARE = 70
EXIT_IO = 74
EXIT_CONFIG = 78


class MirrorBotException(Exception):
    """
    Base exception class for all MirrorBot errors.

    Provides structured error information including error codes,
    readable messages, and actionable suggestions.
    """

    def __init__(
        self,
        message: str,
        error_code: ErrorCode,
        exit_code: int = EXIT_DATA,
        suggestion: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None,
        retryable: bool = False
    ):
        """
        Initialize MirrorBot exception.

        Args:
            message: Human-readable error message
            error_code: Standardized error code
            exit_code: Process exit code used by the command line
            suggestion: Actionable suggestion for the operator
            details: Additional error details
            retryable: Whether the operation can be retried
        """
        super().__init__(message)
        self.message = message
        self.error_code = error_code
        self.exit_code = exit_code
        self.suggestion = suggestion or self._get_default_suggestion()
        self.details = details or {}
        self.retryable = retryable

    def _get_default_suggestion(self) -> str:
        """Get default suggestion based on error code."""
        suggestions = {
            ErrorCode.CONFIG_ERROR: "Check the experiment config file and the environment variables it references",
            ErrorCode.AUTH_MISSING: "Export the API key in the environment variable named by the backend config",
            ErrorCode.BACKEND_UNAVAILABLE: "The model endpoint did not answer; retry later or use the mock backend",
            ErrorCode.REPLAY_EXHAUSTED: "The transcript has no response for this iteration; re-record it",
            ErrorCode.MISSING_SCORES: "Run the judge subcommand on the run directory first",
            ErrorCode.RUN_NOT_FOUND: "Check the run directory path",
            ErrorCode.NON_CONVERGENCE: "Increase the iteration limit or inspect the data for degenerate columns",
            ErrorCode.NOT_POSITIVE_DEFINITE: "Drop constant or collinear columns from the dataset",
            ErrorCode.ZERO_VARIANCE: "Pool more runs so that every column varies",
            ErrorCode.INSUFFICIENT_DATA: "Collect more scored iterations before fitting",
        }
        return suggestions.get(self.error_code, "Check the inputs and try again")

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to dictionary for machine-readable output."""
        return {
            "success": False,
            "error": self.error_code.value,
            "message": self.message,
            "suggestion": self.suggestion,
            "retryable": self.retryable,
            "details": self.details
        }


# Validation Errors
class ValidationError(MirrorBotException):
    """Raised when input validation fails."""

    def __init__(self, message: str, field: Optional[str] = None, **kwargs):
        super().__init__(
            message=message,
            error_code=ErrorCode.VALIDATION_ERROR,
            exit_code=EXIT_USAGE,
            **kwargs
        )
        if field:
            self.details["field"] = field


class ConfigError(MirrorBotException):
    """Raised when an experiment config cannot be loaded or validated."""

    def __init__(self, message: str, **kwargs):
        super().__init__(
            message=message,
            error_code=ErrorCode.CONFIG_ERROR,
            exit_code=EXIT_CONFIG,
            **kwargs
        )


# Simulation and fusion errors
class InsufficientHistoryError(MirrorBotException):
    """Raised when a finite difference needs more state history than is available."""

    def __init__(self, available: int, required: int = 2, **kwargs):
        super().__init__(
            message=f"Need at least {required} history entries, got {available}",
            error_code=ErrorCode.INSUFFICIENT_HISTORY,
            exit_code=EXIT_SOFTWARE,
            **kwargs
        )
        self.details.update({"available": available, "required": required})


class MalformedScanError(MirrorBotException):
    """Raised when a LiDAR scan does not have the configured beam layout."""

    def __init__(self, beams: int, expected: int, **kwargs):
        super().__init__(
            message=f"Scan has {beams} beams, expected {expected}",
            error_code=ErrorCode.MALFORMED_SCAN,
            **kwargs
        )
        self.details.update({"beams": beams, "expected": expected})


class NegativeTimeError(MirrorBotException):
    """Raised when a timestamp precedes the session start."""

    def __init__(self, timestamp: float, session_start: float, **kwargs):
        super().__init__(
            message=f"Timestamp {timestamp} precedes session start {session_start}",
            error_code=ErrorCode.NEGATIVE_TIME,
            **kwargs
        )
        self.details.update({"timestamp": timestamp, "session_start": session_start})


class OutOfOrderSampleError(MirrorBotException):
    """Raised when a sample is pushed with a timestamp not after the latest one."""

    def __init__(self, modality: str, timestamp: float, latest: float, **kwargs):
        super().__init__(
            message=f"{modality} sample at {timestamp} is not after latest {latest}",
            error_code=ErrorCode.OUT_OF_ORDER_SAMPLE,
            exit_code=EXIT_SOFTWARE,
            **kwargs
        )
        self.details.update({"modality": modality, "timestamp": timestamp, "latest": latest})


# Model backend errors
class MalformedResponseError(MirrorBotException):
    """Raised when a model reply cannot be parsed into a prediction."""

    def __init__(self, reason: str, raw: Optional[str] = None, **kwargs):
        super().__init__(
            message=f"Malformed model response: {reason}",
            error_code=ErrorCode.MALFORMED_RESPONSE,
            **kwargs
        )
        self.details["reason"] = reason
        if raw is not None:
            self.details["raw_excerpt"] = raw[:200]


class BackendUnavailableError(MirrorBotException):
    """Raised when a backend keeps failing after all retries."""

    def __init__(self, backend: str, reason: Optional[str] = None, **kwargs):
        super().__init__(
            message=f"Backend {backend} is unavailable",
            error_code=ErrorCode.BACKEND_UNAVAILABLE,
            exit_code=EXIT_UNAVAILABLE,
            **kwargs
        )
        self.details["backend"] = backend
        if reason:
            self.details["reason"] = reason


class BackendTimeoutError(MirrorBotException):
    """Raised when a backend request times out."""

    def __init__(self, timeout_seconds: float, **kwargs):
        super().__init__(
            message=f"Backend request timed out after {timeout_seconds} seconds",
            error_code=ErrorCode.BACKEND_TIMEOUT,
            exit_code=EXIT_UNAVAILABLE,
            retryable=True,
            **kwargs
        )
        self.details["timeout_seconds"] = timeout_seconds


class BackendHTTPError(MirrorBotException):
    """Raised on an error status from the model endpoint."""

    def __init__(self, status: int, body: str = "", **kwargs):
        super().__init__(
            message=f"Model endpoint answered with status {status}",
            error_code=ErrorCode.BACKEND_HTTP_ERROR,
            exit_code=EXIT_UNAVAILABLE,
            retryable=status == 429 or status >= 500,
            **kwargs
        )
        self.details.update({"status": status, "body_excerpt": body[:200]})


class NetworkError(MirrorBotException):
    """Raised when the model endpoint cannot be reached."""

    def __init__(self, reason: Optional[str] = None, **kwargs):
        super().__init__(
            message="Network error while contacting the model endpoint",
            error_code=ErrorCode.NETWORK_ERROR,
            exit_code=EXIT_UNAVAILABLE,
            retryable=True,
            **kwargs
        )
        if reason:
            self.details["reason"] = reason


class AuthMissingError(MirrorBotException):
    """Raised when the live backend has no API key."""

    def __init__(self, env_var: str, **kwargs):
        super().__init__(
            message=f"API key environment variable {env_var} is not set",
            error_code=ErrorCode.AUTH_MISSING,
            exit_code=EXIT_CONFIG,
            **kwargs
        )
        self.details["env_var"] = env_var


class ReplayExhaustedError(MirrorBotException):
    """Raised when a replay transcript has no response for a requested iteration."""

    def __init__(self, iteration: int, **kwargs):
        super().__init__(
            message=f"Transcript has no response for iteration {iteration}",
            error_code=ErrorCode.REPLAY_EXHAUSTED,
            exit_code=EXIT_NO_INPUT,
            **kwargs
        )
        self.details["iteration"] = iteration


# Judge errors
class MalformedScoreError(MirrorBotException):
    """Raised when a judge reply does not carry an integer score in range."""

    def __init__(self, dimension: str, raw: str = "", **kwargs):
        super().__init__(
            message=f"Judge reply for {dimension} has no score in 0..5",
            error_code=ErrorCode.MALFORMED_SCORE,
            **kwargs
        )
        self.details.update({"dimension": dimension, "raw_excerpt": raw[:200]})


class EmptyRunError(MirrorBotException):
    """Raised when aggregating an empty list of scores."""

    def __init__(self, **kwargs):
        super().__init__(
            message="Cannot aggregate an empty run",
            error_code=ErrorCode.EMPTY_RUN,
            **kwargs
        )


class NonPositiveDimensionError(MirrorBotException):
    """Raised when a ground-truth dimension is zero or negative."""

    def __init__(self, values, **kwargs):
        super().__init__(
            message=f"Actual dimensions must be positive, got {tuple(values)}",
            error_code=ErrorCode.NON_POSITIVE_DIMENSION,
            **kwargs
        )
        self.details["values"] = [float(v) for v in values]


# Structural model errors
class ZeroVarianceError(MirrorBotException):
    """Raised when a column that must vary is constant."""

    def __init__(self, columns, **kwargs):
        super().__init__(
            message=f"Columns with zero variance: {', '.join(columns)}",
            error_code=ErrorCode.ZERO_VARIANCE,
            **kwargs
        )
        self.details["columns"] = list(columns)


class SingularStructureError(MirrorBotException):
    """Raised when I - B is singular for the given parameters."""

    def __init__(self, **kwargs):
        super().__init__(
            message="Structural matrix I - B is singular",
            error_code=ErrorCode.SINGULAR_STRUCTURE,
            **kwargs
        )


class NotPositiveDefiniteError(MirrorBotException):
    """Raised when a covariance matrix is not positive definite."""

    def __init__(self, which: str, **kwargs):
        super().__init__(
            message=f"{which} covariance matrix is not positive definite",
            error_code=ErrorCode.NOT_POSITIVE_DEFINITE,
            **kwargs
        )
        self.details["matrix"] = which


class NonConvergenceError(MirrorBotException):
    """Raised when the optimizer exhausts its iterations without converging."""

    def __init__(self, iterations: int, gradient_norm: float, best_objective: float, **kwargs):
        super().__init__(
            message=f"Estimation did not converge after {iterations} iterations",
            error_code=ErrorCode.NON_CONVERGENCE,
            **kwargs
        )
        self.details.update({
            "iterations": iterations,
            "gradient_norm": gradient_norm,
            "best_objective": best_objective,
        })


class HessianNotPDError(MirrorBotException):
    """Raised when the numeric Hessian cannot be inverted into standard errors."""

    def __init__(self, **kwargs):
        super().__init__(
            message="Numeric Hessian is not positive definite; standard errors unavailable",
            error_code=ErrorCode.HESSIAN_NOT_PD,
            **kwargs
        )


class ZeroDfError(MirrorBotException):
    """Raised when fit indices are requested for a model without degrees of freedom."""

    def __init__(self, df_model: int, df_baseline: int, **kwargs):
        super().__init__(
            message=f"Fit indices need positive degrees of freedom (model {df_model}, baseline {df_baseline})",
            error_code=ErrorCode.ZERO_DF,
            **kwargs
        )
        self.details.update({"df_model": df_model, "df_baseline": df_baseline})


class InsufficientDataError(MirrorBotException):
    """Raised when a dataset has too few rows for estimation."""

    def __init__(self, rows: int, required: int, **kwargs):
        super().__init__(
            message=f"Dataset has {rows} rows, estimation needs at least {required}",
            error_code=ErrorCode.INSUFFICIENT_DATA,
            **kwargs
        )
        self.details.update({"rows": rows, "required": required})


# Runner errors
class MissingScoresError(MirrorBotException):
    """Raised when a run lacks judge output."""

    def __init__(self, run_dir: str, **kwargs):
        super().__init__(
            message=f"Run {run_dir} has no judge scores",
            error_code=ErrorCode.MISSING_SCORES,
            exit_code=EXIT_NO_INPUT,
            **kwargs
        )
        self.details["run_dir"] = run_dir


class RunNotFoundError(MirrorBotException):
    """Raised when a run directory or one of its files does not exist."""

    def __init__(self, path: str, **kwargs):
        super().__init__(
            message=f"Run artifact not found: {path}",
            error_code=ErrorCode.RUN_NOT_FOUND,
            exit_code=EXIT_NO_INPUT,
            **kwargs
        )
        self.details["path"] = path


class StorageError(MirrorBotException):
    """Raised when run artifacts cannot be written."""

    def __init__(self, operation: str, reason: Optional[str] = None, **kwargs):
        super().__init__(
            message=f"Storage operation failed: {operation}",
            error_code=ErrorCode.STORAGE_ERROR,
            exit_code=EXIT_IO,
            **kwargs
        )
        self.details["operation"] = operation
        if reason:
            self.details["reason"] = reason


class InternalError(MirrorBotException):
    """Raised for unexpected internal errors."""

    def __init__(self, reason: Optional[str] = None, **kwargs):
        super().__init__(
            message="An unexpected internal error occurred",
            error_code=ErrorCode.INTERNAL_ERROR,
            exit_code=EXIT_SOFTWARE,
            **kwargs
        )
        if reason:
            self.details["reason"] = reason


def classify_http_status(status: int, body: str = "", env_var: str = "",
                         retry_after: Optional[float] = None) -> MirrorBotException:
    """
    Map an error status from the model endpoint to a MirrorBot exception.

    Args:
        status: HTTP status code returned by the endpoint
        body: Response body, kept as an excerpt in details
        env_var: Name of the API key variable, reported on auth failures
        retry_after: Seconds the endpoint asked us to wait, if it said

    Returns:
        Appropriate MirrorBot exception
    """
    if status in (401, 403):
        return AuthMissingError(env_var or "API key", details={"status": status})
    error = BackendHTTPError(status, body)
    if retry_after is not None:
        error.details["retry_after"] = retry_after
    return error
