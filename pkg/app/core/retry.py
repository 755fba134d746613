"""
Retry with exponential backoff for calls to model endpoints.

MirrorBot exceptions carry their own ``retryable`` flag (timeouts, network
errors, 429 and 5xx answers); plain exceptions are matched against a list of
transient types. A ``retry_after`` hint in the exception details, taken from
the endpoint's ``Retry-After`` header, stretches the next delay.
"""

import asyncio
import logging
import random
from dataclasses import dataclass
from typing import Any, Awaitable, Callable, Dict, Optional, Sequence, Tuple, Type

from app.core.config import settings
from app.core.exceptions import MirrorBotException


logger = logging.getLogger(__name__)

TRANSIENT_EXCEPTIONS: Tuple[Type[BaseException], ...] = (ConnectionError, TimeoutError)


class RetryConfig:
    """Backoff schedule: ``base_delay * multiplier ** attempt`` capped at ``max_delay``."""

    def __init__(
        self,
        max_attempts: int = 3,
        base_delay: float = 1.0,
        max_delay: float = 30.0,
        multiplier: float = 2.0,
        jitter: bool = True,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.max_delay = max_delay
        self.multiplier = multiplier
        self.jitter = jitter

    @classmethod
    def from_settings(cls, retries: Optional[int] = None) -> "RetryConfig":
        """Schedule for ``retries`` retries after the first call, delays from the environment."""
        retries = settings.backend_retries if retries is None else retries
        return cls(
            max_attempts=retries + 1,
            base_delay=settings.retry_base_delay,
            max_delay=settings.retry_max_delay,
        )

    def calculate_delay(self, attempt: int, rng: Optional[random.Random] = None,
                        retry_after: Optional[float] = None) -> float:
        """Seconds to wait after 0-based ``attempt`` failed."""
        delay = min(self.base_delay * self.multiplier ** attempt, self.max_delay)
        if self.jitter:
            spread = 0.1 * delay
            delay += (rng or random).uniform(-spread, spread)
        if retry_after is not None:
            delay = max(delay, min(retry_after, self.max_delay))
        return max(0.0, delay)


@dataclass
class RetryStats:
    """Counters for one operation label."""

    calls: int = 0
    retries: int = 0
    failures: int = 0


class RetryManager:
    """
    Runs coroutines under a retry schedule and counts what happened.

    Features:
    - Retry decision from ``MirrorBotException.retryable`` or the transient list
    - Server ``Retry-After`` hints respected up to ``max_delay``
    - Per-operation statistics for run reports
    """

    def __init__(self, config: Optional[RetryConfig] = None, seed: Optional[int] = None):
        self.config = config or RetryConfig()
        self._rng = random.Random(seed)
        self.stats: Dict[str, RetryStats] = {}

    @staticmethod
    def is_retryable(exc: BaseException, transient: Sequence[Type[BaseException]] = TRANSIENT_EXCEPTIONS) -> bool:
        if isinstance(exc, MirrorBotException):
            return exc.retryable
        return isinstance(exc, tuple(transient))

    async def retry_async(
        self,
        func: Callable[..., Awaitable[Any]],
        *args,
        config: Optional[RetryConfig] = None,
        operation: Optional[str] = None,
        transient: Sequence[Type[BaseException]] = TRANSIENT_EXCEPTIONS,
        **kwargs,
    ) -> Any:
        """
        Await ``func(*args, **kwargs)``, retrying transient failures.

        Raises:
            The last exception once attempts run out or a failure is not retryable
        """
        schedule = config or self.config
        label = operation or getattr(func, "__name__", repr(func))
        stats = self.stats.setdefault(label, RetryStats())
        stats.calls += 1

        for attempt in range(schedule.max_attempts):
            try:
                result = await func(*args, **kwargs)
            except Exception as e:
                last_attempt = attempt == schedule.max_attempts - 1
                if last_attempt or not self.is_retryable(e, transient):
                    stats.failures += 1
                    logger.error(
                        f"{label} failed after {attempt + 1} attempt(s): {e}",
                        extra={"operation": label, "attempts": attempt + 1},
                    )
                    raise

                retry_after = None
                if isinstance(e, MirrorBotException):
                    retry_after = e.details.get("retry_after")
                delay = schedule.calculate_delay(attempt, self._rng, retry_after)
                stats.retries += 1
                logger.warning(
                    f"{label} attempt {attempt + 1} failed, retrying in {delay:.2f}s: {e}",
                    extra={"operation": label, "attempt": attempt + 1, "delay": delay},
                )
                await asyncio.sleep(delay)
            else:
                if attempt > 0:
                    logger.info(f"{label} succeeded on attempt {attempt + 1}", extra={"operation": label})
                return result

    def snapshot(self) -> Dict[str, Dict[str, int]]:
        """Per-operation counters, as written to the run report."""
        return {label: vars(s).copy() for label, s in sorted(self.stats.items())}

