"""Per-stage wall-clock instrumentation."""

from __future__ import annotations

import threading
import time
from contextlib import contextmanager


class StageTimer:
    """Accumulates elapsed milliseconds per named stage; safe across threads."""

    def __init__(self):
        self.ms: dict[str, float] = {}
        self._lock = threading.Lock()

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = (time.perf_counter() - start) * 1000.0
            with self._lock:
                self.ms[name] = self.ms.get(name, 0.0) + elapsed

    def rounded(self) -> dict[str, float]:
        with self._lock:
            return {name: round(value, 3) for name, value in self.ms.items()}
