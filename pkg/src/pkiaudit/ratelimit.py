"""Token-bucket rate limiting shared across concurrent audit tasks."""

from __future__ import annotations

import threading
import time
from typing import Callable, Optional


class TokenBucket:
    """Thread-safe token bucket.

    ``rate`` tokens are added per second up to ``burst``. A rate of ``None``
    or ``0`` disables limiting entirely.
    """

    def __init__(
        self,
        rate: Optional[float],
        burst: Optional[float] = None,
        *,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if rate is not None and rate < 0:
            raise ValueError("rate must be non-negative")
        self.rate = rate or None
        self.burst = burst if burst is not None else max(1.0, rate or 1.0)
        self._clock = clock
        self._sleep = sleep
        self._tokens = self.burst
        self._stamp = clock()
        self._lock = threading.Lock()

    def _refill(self) -> None:
        now = self._clock()
        self._tokens = min(self.burst, self._tokens + (now - self._stamp) * self.rate)
        self._stamp = now

    def acquire(self, tokens: float = 1.0) -> float:
        """Block until ``tokens`` are available. Returns seconds waited."""
        if self.rate is None:
            return 0.0
        waited = 0.0
        while True:
            with self._lock:
                self._refill()
                if self._tokens >= tokens:
                    self._tokens -= tokens
                    return waited
                delay = (tokens - self._tokens) / self.rate
            self._sleep(delay)
            waited += delay


UNLIMITED = TokenBucket(None)
