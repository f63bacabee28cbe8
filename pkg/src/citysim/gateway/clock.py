"""Event-loop clocks.

The gateway always runs on an asyncio loop. For real traffic that is the stock
selector loop; for benchmarks and tests it is :class:`VirtualEventLoop`, whose
``time()`` is driven by a :class:`VirtualClock`. Whenever the loop would block
waiting for a timer, the virtual selector jumps the clock straight to that
timer instead of sleeping, so a 200 s makespan simulates in milliseconds and
is bit-identical from run to run.
"""
from __future__ import annotations

import asyncio
import selectors
import time


class VirtualClock:
    """Integer-nanosecond clock; durations computed from it are exact."""

    def __init__(self, start_ns: int = 0):
        self._ns = int(start_ns)

    def now_ns(self) -> int:
        return self._ns

    def now(self) -> float:
        return self._ns / 1e9

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("cannot move a clock backwards")
        self._ns += round(seconds * 1e9)


class RealClock:
    def now_ns(self) -> int:
        return time.monotonic_ns()

    def now(self) -> float:
        return time.monotonic()


class _VirtualSelector(selectors.DefaultSelector):
    def __init__(self, clock: VirtualClock):
        super().__init__()
        self._clock = clock

    def select(self, timeout=None):
        ready = super().select(0)
        if ready or timeout == 0:
            return ready
        if timeout is None:
            # nothing scheduled: only another thread can wake us
            return super().select(None)
        self._clock.advance(timeout)
        return []


class VirtualEventLoop(asyncio.SelectorEventLoop):
    def __init__(self, clock: VirtualClock | None = None):
        self.clock = clock or VirtualClock()
        super().__init__(selector=_VirtualSelector(self.clock))

    def time(self) -> float:
        return self.clock.now()


def ns(seconds: float) -> int:
    return round(seconds * 1e9)
