"""Injectable clocks.

Everything that reads wall time or measures durations takes a clock so tests
can pin both and replay runs byte-for-byte.
"""
from __future__ import annotations

import threading
import time
from datetime import datetime, timedelta, timezone


def utc(dt: datetime) -> datetime:
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def parse_instant(text: str) -> datetime:
    return utc(datetime.fromisoformat(text.strip().replace("Z", "+00:00")))


def format_instant(dt: datetime) -> str:
    return utc(dt).isoformat().replace("+00:00", "Z")


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)

    def monotonic(self) -> float:
        return time.monotonic()


class FakeClock:
    """Deterministic clock.

    ``now()`` stays put until ``advance()`` is called; ``monotonic()`` moves
    forward by ``tick`` seconds on every read so measured durations are
    non-zero yet reproducible.
    """

    def __init__(self, start: datetime | str, tick: float = 0.001):
        self._now = parse_instant(start) if isinstance(start, str) else utc(start)
        self._tick = tick
        self._mono = 0.0
        self._lock = threading.Lock()

    def now(self) -> datetime:
        return self._now

    def monotonic(self) -> float:
        with self._lock:
            self._mono += self._tick
            return self._mono

    def advance(self, delta: timedelta | float) -> None:
        if not isinstance(delta, timedelta):
            delta = timedelta(seconds=delta)
        with self._lock:
            self._now += delta
            self._mono += delta.total_seconds()


def elapsed_ms(clock, started: float) -> float:
    return round((clock.monotonic() - started) * 1000.0, 3)
