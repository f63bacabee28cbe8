"""Discrete-event model of the gateway, used as an independent timing oracle.

This replays the scheduling rules with plain arithmetic on a heap of
connection release times; it shares no code with the asyncio gateway.
"""
from __future__ import annotations

import heapq
from typing import Sequence

from ..backends.latency import LatencyModel


def predict_makespan(waits: Sequence[float], lm: LatencyModel, capacity: int,
                     reuse: bool = True, scheduler: str = "async") -> float:
    """Makespan of dispatching requests whose transfer/wait phases are ``waits``.

    All requests are queued at t=0 and served FIFO. Initialization is serial
    on the dispatcher; the dispatcher blocks until a connection is free.
    """
    if scheduler == "sequential":
        return _sequential(waits, lm, reuse)
    disp = 0.0
    busy: list[float] = []  # release times of open connections
    opened = 0
    end = 0.0
    for wait in waits:
        ready = disp + lm.t_init
        if reuse:
            if busy and busy[0] <= ready:
                heapq.heappop(busy)
                start, connect = ready, 0.0
            elif opened < capacity:
                opened += 1
                start, connect = ready, lm.t_connect
            else:
                start, connect = max(ready, heapq.heappop(busy)), 0.0
            finish = start + connect + wait
        else:
            if opened < capacity:
                opened += 1
                start = ready
            else:
                start = max(ready, heapq.heappop(busy))
            finish = start + lm.t_connect + wait + lm.t_teardown
        heapq.heappush(busy, finish)
        disp = start
        end = max(end, finish)
    return end


def _sequential(waits, lm, reuse):
    t = 0.0
    for i, wait in enumerate(waits):
        t += lm.t_init + wait
        if not reuse or i == 0:
            t += lm.t_connect
        if not reuse:
            t += lm.t_teardown
    return t


def overlap_bound(n: int, lm: LatencyModel, capacity: int, wait: float | None = None) -> float:
    """Upper bound N*t_init + ceil(N/C)*t_wait + C*t_connect for uniform waits."""
    wait = lm.t_wait_base if wait is None else wait
    return n * lm.t_init + -(-n // capacity) * wait + capacity * lm.t_connect
