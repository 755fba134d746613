"""
Error boundary for the MirrorBot command line.

Every subcommand runs inside :class:`ErrorBoundary`: domain exceptions are
logged, rendered as one JSON object on stderr and mapped to their exit code.
"""

import json
import logging
import sys
import time
import traceback
from typing import Any, Callable, Dict, Optional, TextIO

from pydantic import ValidationError as PydanticValidationError

from app.core.exceptions import (
    EXIT_IO,
    EXIT_SOFTWARE,
    EXIT_UNAVAILABLE,
    MirrorBotException,
    ErrorCode,
    InternalError,
    ValidationError,
)


logger = logging.getLogger(__name__)

# exit codes that point at the system rather than the operator's inputs
SYSTEM_EXIT_CODES = frozenset({EXIT_SOFTWARE, EXIT_IO, EXIT_UNAVAILABLE})


class ErrorBoundary:
    """
    Runs one subcommand and converts failures into a machine-readable report.

    Provides structured error output, logging at the right level and the
    elapsed time of the failed command.
    """

    def __init__(self, command: str, stream: Optional[TextIO] = None):
        self.command = command
        self.stream = stream

    def run(self, func: Callable[[], Any]) -> int:
        """Call ``func`` and return the process exit status."""
        start_time = time.time()
        try:
            func()
            return 0
        except MirrorBotException as e:
            return self._handle_mirrorbot_exception(e, start_time)
        except PydanticValidationError as e:
            return self._handle_validation_exception(e, start_time)
        except Exception as e:
            return self._handle_unexpected_exception(e, start_time)

    def _emit(self, payload: Dict[str, Any], start_time: float) -> None:
        payload["command"] = self.command
        payload["elapsed_ms"] = round((time.time() - start_time) * 1000, 2)
        stream = self.stream or sys.stderr
        stream.write(json.dumps(payload, sort_keys=True, default=str) + "\n")
        stream.flush()

    def _handle_mirrorbot_exception(self, exc: MirrorBotException, start_time: float) -> int:
        log_data = {
            "error_code": exc.error_code.value,
            "error_message": exc.message,
            "command": self.command,
            "retryable": exc.retryable,
        }
        if exc.exit_code in SYSTEM_EXIT_CODES:
            logger.error(f"MirrorBot error: {exc.message}", extra=log_data)
        else:
            logger.warning(f"MirrorBot error: {exc.message}", extra=log_data)

        self._emit(exc.to_dict(), start_time)
        return exc.exit_code

    def _handle_validation_exception(self, exc: PydanticValidationError, start_time: float) -> int:
        errors = exc.errors()
        first = errors[0] if errors else {}
        field_name = first.get("loc", ["unknown"])[-1] if first.get("loc") else "unknown"
        error_msg = first.get("msg", "Validation error")

        logger.warning(f"Validation error: {error_msg}", extra={"field": field_name, "command": self.command})

        wrapped = ValidationError(
            f"Invalid {field_name}: {error_msg}",
            field=str(field_name),
            details={"validation_errors": [e.get("msg") for e in errors]},
        )
        self._emit(wrapped.to_dict(), start_time)
        return wrapped.exit_code

    def _handle_unexpected_exception(self, exc: Exception, start_time: float) -> int:
        logger.error(
            f"Unexpected error: {exc}",
            extra={"command": self.command, "traceback": traceback.format_exc()},
        )
        internal_error = InternalError(reason=f"{type(exc).__name__}: {exc}")
        self._emit(internal_error.to_dict(), start_time)
        return internal_error.exit_code


def error_code_of(payload: str) -> ErrorCode:
    """Error code from one emitted stderr line."""
    return ErrorCode(json.loads(payload)["error"])
