"""
Performance monitoring for MirrorBot sessions.

Tracks backend latency and unusable replies per iteration together with
periodic snapshots of the process resources. The summary is written next to
the run reports and never enters the deterministic artifacts.
"""

import logging
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional

import numpy as np
import psutil


logger = logging.getLogger(__name__)


@dataclass
class IterationMetrics:
    """Timing of one agent iteration."""
    iteration: int
    latency_ms: float
    failed: bool
    timestamp: float


@dataclass
class SystemMetrics:
    """Process resource snapshot."""
    timestamp: float
    cpu_percent: float
    memory_rss_mb: float
    memory_percent: float


class PerformanceMonitor:
    """
    Per-session performance monitor.

    Features:
    - Backend latency tracking with warning and critical thresholds
    - Unusable-reply rate
    - Process CPU and memory snapshots every ``sample_every`` iterations
    """

    def __init__(self, max_history: int = 10000, sample_every: int = 60):
        self.iterations: deque = deque(maxlen=max_history)
        self.system_metrics: deque = deque(maxlen=1000)
        self.sample_every = sample_every

        self.thresholds = {
            'latency_warning_ms': 3000.0,
            'latency_critical_ms': 10000.0,
            'failure_rate_warning': 0.05,
        }

        self._process = psutil.Process()
        self._process.cpu_percent(interval=None)
        self._started = time.perf_counter()
        self._lock = threading.Lock()

    def record_iteration(self, latency_ms: float, failed: bool = False) -> None:
        with self._lock:
            metrics = IterationMetrics(
                iteration=len(self.iterations) + 1,
                latency_ms=latency_ms,
                failed=failed,
                timestamp=time.time(),
            )
            self.iterations.append(metrics)

        if latency_ms > self.thresholds['latency_critical_ms']:
            logger.error(f"Performance alert: iteration {metrics.iteration} took {latency_ms:.0f} ms")
        elif latency_ms > self.thresholds['latency_warning_ms']:
            logger.warning(f"Performance alert: iteration {metrics.iteration} took {latency_ms:.0f} ms")

        if metrics.iteration % self.sample_every == 0:
            self.sample_system()

    def sample_system(self) -> SystemMetrics:
        """Take and keep one resource snapshot."""
        memory = self._process.memory_info()
        snapshot = SystemMetrics(
            timestamp=time.time(),
            cpu_percent=self._process.cpu_percent(interval=None),
            memory_rss_mb=memory.rss / (1024 * 1024),
            memory_percent=self._process.memory_percent(),
        )
        self.system_metrics.append(snapshot)
        return snapshot

    def summary(self) -> Dict[str, Any]:
        """Aggregates for report/performance.json."""
        with self._lock:
            latencies = np.array([m.latency_ms for m in self.iterations], dtype=float)
            failures = sum(1 for m in self.iterations if m.failed)
            count = len(self.iterations)

        latest: Optional[SystemMetrics] = self.system_metrics[-1] if self.system_metrics else self.sample_system()
        failure_rate = failures / count if count else 0.0
        if failure_rate > self.thresholds['failure_rate_warning']:
            logger.warning(f"Unusable reply rate {failure_rate:.1%} over {count} iterations")

        latency: Dict[str, Optional[float]] = {"mean": None, "p50": None, "p95": None, "max": None}
        if count:
            latency = {
                "mean": float(latencies.mean()),
                "p50": float(np.percentile(latencies, 50)),
                "p95": float(np.percentile(latencies, 95)),
                "max": float(latencies.max()),
            }

        return {
            "iterations": count,
            "failures": failures,
            "failure_rate": failure_rate,
            "latency_ms": latency,
            "wall_seconds": time.perf_counter() - self._started,
            "system": asdict(latest),
            "snapshots": [asdict(s) for s in self.system_metrics],
        }

    def history(self) -> List[Dict[str, Any]]:
        with self._lock:
            return [asdict(m) for m in self.iterations]
