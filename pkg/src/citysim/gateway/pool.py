from __future__ import annotations

import asyncio
from collections import deque

_FRESH = object()


class ConnectionPool:
    """Bounded set of reusable backend connections.

    ``acquire`` returns either an idle connection (reuse) or ``None``, which
    means a slot was reserved and the caller must open a new connection into
    it. Waiters are served strictly FIFO by direct hand-off so scheduling stays
    deterministic.
    """

    def __init__(self, capacity: int, reuse: bool = True):
        if capacity < 1:
            raise ValueError("pool capacity must be >= 1")
        self.capacity = capacity
        self.reuse = reuse
        self.idle: deque = deque()
        self.in_flight: dict = {}
        self._slots_used = 0  # idle + in-flight + being opened
        self._waiters: deque[asyncio.Future] = deque()
        self.peak_in_flight = 0

    @property
    def open_count(self) -> int:
        return self._slots_used

    async def acquire(self):
        if self.idle:
            return self.idle.popleft()
        if self._slots_used < self.capacity:
            self._slots_used += 1
            return None
        fut = asyncio.get_running_loop().create_future()
        self._waiters.append(fut)
        got = await fut
        return None if got is _FRESH else got

    def bind(self, request_id, conn) -> None:
        if request_id in self.in_flight:
            raise RuntimeError(f"request {request_id} already holds a connection")
        self.in_flight[request_id] = conn
        self.peak_in_flight = max(self.peak_in_flight, len(self.in_flight))

    def unbind(self, request_id):
        return self.in_flight.pop(request_id)

    def give_back(self, conn) -> None:
        """Return a healthy connection for reuse."""
        while self._waiters:
            fut = self._waiters.popleft()
            if not fut.done():
                fut.set_result(conn)
                return
        self.idle.append(conn)

    def free_slot(self) -> None:
        """Release a slot whose connection has been closed."""
        while self._waiters:
            fut = self._waiters.popleft()
            if not fut.done():
                fut.set_result(_FRESH)
                return
        self._slots_used -= 1

    def drain_idle(self) -> list:
        conns = list(self.idle)
        self.idle.clear()
        self._slots_used -= len(conns)
        return conns
