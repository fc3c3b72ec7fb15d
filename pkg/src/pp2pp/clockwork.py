"""Injectable clock so expiry logic is testable without sleeping."""

from __future__ import annotations

import time


class Clock:
    """Wall clock in integer milliseconds."""

    def now_ms(self) -> int:
        return time.time_ns() // 1_000_000


class ManualClock(Clock):
    """Test clock: starts at a fixed instant, advances only when told."""

    def __init__(self, start_ms: int = 1_700_000_000_000):
        self._now = start_ms

    def now_ms(self) -> int:
        return self._now

    def advance(self, ms: int) -> None:
        self._now += ms


SYSTEM_CLOCK = Clock()
