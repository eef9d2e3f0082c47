"""Injectable simulated clock.

All timestamps in the system are milliseconds since epoch taken from one of
these, never from the wall clock, so scenario replays are deterministic.
"""

from __future__ import annotations


class SimClock:
    def __init__(self, start_ms: int = 0):
        self._now = int(start_ms)

    def now(self) -> int:
        return self._now

    def advance(self, delta_ms: int) -> int:
        if delta_ms < 0:
            raise ValueError("clock cannot move backwards")
        self._now += int(delta_ms)
        return self._now

    def __repr__(self) -> str:  # pragma: no cover
        return f"SimClock(now={self._now})"


MINUTE_MS = 60_000
HOUR_MS = 3_600_000
