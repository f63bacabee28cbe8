"""Asynchronous LLM request gateway.

Requests are dispatched FIFO (by ``created_at``, then ``request_id``) by a
single dispatcher coroutine. The dispatcher owns the client-side
initialization phase, hands each request a pooled connection and returns to
the queue immediately, so transfer/wait phases of up to ``pool_capacity``
requests overlap on one event loop. Local CPU tasks run on a separate worker
pool so they never occupy the dispatcher.

Two execution modes share the same coroutines:

* ``clock="virtual"``: a :class:`VirtualEventLoop` that is *driven* by whoever
  awaits a handle. Nothing advances while nobody waits, which keeps results
  bit-identical for a single-threaded caller.
* ``clock="real"``: a stock event loop running forever on a background thread.
"""
from __future__ import annotations

import asyncio
import concurrent.futures
import heapq
import itertools
import logging
import threading
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Any, Iterable, Protocol

from ..errors import (BackendError, GatewayClosed, HandleConsumed, TransportError,
                      WorkerPoolClosed)
from .clock import RealClock, VirtualEventLoop
from .pool import ConnectionPool
from .types import GatewayStats, LlmRequest, LlmResponse, LocalTask, PhaseTimings

log = logging.getLogger(__name__)


class Backend(Protocol):
    async def prepare(self, req: LlmRequest) -> Any: ...

    async def connect(self) -> Any: ...

    async def exchange(self, conn: Any, req: LlmRequest, payload: Any) -> tuple[str, int, int]: ...

    async def close(self, conn: Any) -> None: ...


@dataclass
class GatewayConfig:
    pool_capacity: int = 8
    reuse_connections: bool = True
    worker_count: int = 4
    # "async" overlaps requests; "sequential" waits for each response before
    # dispatching the next one (the unscheduled baseline)
    scheduler: str = "async"
    # False runs local tasks on the dispatcher itself (no offload)
    offload: bool = True
    worker_kind: str = "thread"
    max_retries: int = 1

    def __post_init__(self):
        if self.pool_capacity < 1:
            raise ValueError("pool_capacity must be >= 1")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if self.scheduler not in ("async", "sequential"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.worker_kind not in ("thread", "process"):
            raise ValueError(f"unknown worker_kind {self.worker_kind!r}")


class _Handle:
    def __init__(self, gateway: "Gateway", key, future: concurrent.futures.Future):
        self._gateway = gateway
        self._future = future
        self._consumed = False
        self._guard = threading.Lock()
        self.key = key

    def done(self) -> bool:
        return self._future.done()

    def _consume(self):
        with self._guard:
            if self._consumed:
                raise HandleConsumed(f"handle {self.key} was already awaited")
            self._consumed = True
        return self._gateway._wait(self._future)

    def __repr__(self):
        state = "done" if self.done() else "pending"
        return f"<{type(self).__name__} {self.key} {state}>"


class ResponseHandle(_Handle):
    @property
    def request_id(self):
        return self.key

    def result(self) -> LlmResponse:
        return self._gateway.await_response(self)


class TaskHandle(_Handle):
    @property
    def task_id(self):
        return self.key

    def result(self):
        return self._consume()


class Gateway:
    def __init__(self, backend: Backend, config: GatewayConfig | None = None, *,
                 clock: str = "virtual"):
        if clock not in ("virtual", "real"):
            raise ValueError(f"unknown clock {clock!r}")
        self.backend = backend
        self.config = config or GatewayConfig()
        self._driven = clock == "virtual"
        self._lock = threading.Lock()
        self._drive_lock = threading.Lock()
        self._closed = False
        self._seen_ids: set = set()
        self._unresolved: set[concurrent.futures.Future] = set()
        self._seq = itertools.count()
        self._counters = defaultdict(int)
        self._mailboxes: dict[Any, deque] = defaultdict(deque)
        self._frozen_wall_ns: int | None = None
        self.pool = ConnectionPool(self.config.pool_capacity, self.config.reuse_connections)
        self._pending: list = []

        if self._driven:
            self._loop = VirtualEventLoop()
            self.clock = self._loop.clock
            self._executor = None
            self._thread = None
        else:
            self._loop = asyncio.new_event_loop()
            self.clock = RealClock()
            pool_cls = (concurrent.futures.ThreadPoolExecutor if self.config.worker_kind == "thread"
                        else concurrent.futures.ProcessPoolExecutor)
            self._executor = pool_cls(max_workers=self.config.worker_count)
            self._thread = threading.Thread(target=self._loop.run_forever,
                                            name="citysim-gateway", daemon=True)
            self._thread.start()
        self._start_ns = self.clock.now_ns()
        self._loop.call_soon_threadsafe(self._start)

    # -- loop-side setup ---------------------------------------------------

    def _start(self):
        self._wakeup = asyncio.Event()
        self._cpu = asyncio.Lock()
        self._workers = asyncio.Semaphore(self.config.worker_count)
        self._dispatcher = self._loop.create_task(self._dispatch_loop())

    # -- public API --------------------------------------------------------

    def submit(self, req: LlmRequest) -> ResponseHandle:
        """Queue ``req`` and return at once with a handle for its response."""
        future: concurrent.futures.Future = concurrent.futures.Future()
        with self._lock:
            if self._closed:
                raise GatewayClosed("gateway has been shut down")
            if req.request_id in self._seen_ids:
                raise ValueError(f"duplicate request_id {req.request_id!r}")
            self._seen_ids.add(req.request_id)
            self._unresolved.add(future)
            key = (req.created_at, req.request_id, next(self._seq))
        self._loop.call_soon_threadsafe(self._enqueue, key, req, future)
        return ResponseHandle(self, req.request_id, future)

    def await_response(self, handle: ResponseHandle) -> LlmResponse:
        return handle._consume()

    def offload_local_task(self, task: LocalTask) -> TaskHandle:
        future: concurrent.futures.Future = concurrent.futures.Future()
        with self._lock:
            if self._closed:
                raise WorkerPoolClosed("worker pool has been shut down")
            self._unresolved.add(future)
        self._loop.call_soon_threadsafe(self._spawn_local, task, future)
        return TaskHandle(self, task.task_id, future)

    def mailbox(self, agent_id) -> list:
        """Drain and return ``(task_id, result)`` pairs delivered to an agent."""
        with self._lock:
            box = self._mailboxes.pop(agent_id, None)
        return list(box) if box else []

    def gateway_stats(self) -> GatewayStats:
        with self._lock:
            c = dict(self._counters)
            wall = (self._frozen_wall_ns if self._frozen_wall_ns is not None
                    else self.clock.now_ns() - self._start_ns)
        return GatewayStats(
            requests_total=c.get("requests", 0),
            errors_total=c.get("errors", 0),
            tokens_in_total=c.get("tokens_in", 0),
            tokens_out_total=c.get("tokens_out", 0),
            connections_created=c.get("created", 0),
            connections_reused=c.get("reused", 0),
            local_tasks_total=c.get("local_tasks", 0),
            wall_time_ns=wall,
            t_init_ns=c.get("t_init", 0),
            t_connect_ns=c.get("t_connect", 0),
            t_transfer_wait_ns=c.get("t_wait", 0),
        )

    def now(self) -> float:
        return (self.clock.now_ns() - self._start_ns) / 1e9

    def wait_all(self) -> None:
        """Block until every submitted request and task has resolved."""
        while True:
            with self._lock:
                pending = next(iter(self._unresolved), None)
            if pending is None:
                return
            try:
                self._wait(pending)
            except Exception:
                pass

    def shutdown(self, wait: bool = True) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
        if wait:
            self.wait_all()
        with self._lock:
            self._frozen_wall_ns = self.clock.now_ns() - self._start_ns
        self._run_sync(self._teardown())
        if self._driven:
            self._loop.close()
        else:
            self._loop.call_soon_threadsafe(self._loop.stop)
            self._thread.join()
            self._loop.close()
            self._executor.shutdown(wait=True)

    close = shutdown

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown(wait=exc[0] is None)

    @property
    def closed(self) -> bool:
        return self._closed

    # -- driving -----------------------------------------------------------

    def _wait(self, future: concurrent.futures.Future):
        if self._driven:
            while not future.done():
                if self._drive_lock.acquire(blocking=False):
                    try:
                        if not future.done():
                            self._loop.run_until_complete(_settled(future))
                    finally:
                        self._drive_lock.release()
                else:
                    concurrent.futures.wait([future], timeout=0.005)
        return future.result()

    def _run_sync(self, coro):
        if self._driven:
            with self._drive_lock:
                return self._loop.run_until_complete(coro)
        return asyncio.run_coroutine_threadsafe(coro, self._loop).result()

    # -- loop-side machinery -------------------------------------------------

    def _enqueue(self, key, req, future):
        heapq.heappush(self._pending, (key, req, future))
        self._wakeup.set()

    def _resolve(self, future, result=None, exc=None):
        with self._lock:
            self._unresolved.discard(future)
        if exc is None:
            future.set_result(result)
        else:
            future.set_exception(exc)

    def _count(self, **deltas):
        with self._lock:
            for k, v in deltas.items():
                self._counters[k] += v

    def _elapsed(self, since: int) -> int:
        return self.clock.now_ns() - since

    async def _dispatch_loop(self):
        while True:
            while not self._pending:
                self._wakeup.clear()
                await self._wakeup.wait()
            _, req, future = heapq.heappop(self._pending)
            async with self._cpu:
                t0 = self.clock.now_ns()
                try:
                    payload = await self.backend.prepare(req)
                except BackendError as exc:
                    self._fail(req, future, exc)
                    continue
                t_init = self._elapsed(t0)
            conn = await self.pool.acquire()
            job = self._loop.create_task(self._exchange(req, future, payload, t_init, conn))
            if self.config.scheduler == "sequential":
                await job

    async def _exchange(self, req: LlmRequest, future, payload, t_init: int, conn):
        connect_ns = 0
        retries = 0
        try:
            while True:
                if conn is None:
                    t0 = self.clock.now_ns()
                    try:
                        conn = await self.backend.connect()
                    except BaseException:
                        self.pool.free_slot()
                        raise
                    connect_ns += self._elapsed(t0)
                    self._count(created=1)
                else:
                    self._count(reused=1)
                self.pool.bind(req.request_id, conn)
                t1 = self.clock.now_ns()
                try:
                    text, tokens_in, tokens_out = await self.backend.exchange(conn, req, payload)
                except BaseException as exc:
                    self.pool.unbind(req.request_id)
                    await self._discard(conn)
                    conn = None
                    if isinstance(exc, TransportError) and retries < self.config.max_retries:
                        retries += 1
                        log.warning("request %s: transport error, retrying on a fresh "
                                    "connection: %s", req.request_id, exc)
                        conn = await self.pool.acquire()
                        continue
                    raise
                wait_ns = self._elapsed(t1)
                self.pool.unbind(req.request_id)
                if self.config.reuse_connections:
                    self.pool.give_back(conn)
                else:
                    t2 = self.clock.now_ns()
                    await self.backend.close(conn)
                    connect_ns += self._elapsed(t2)
                    self.pool.free_slot()
                break
        except BackendError as exc:
            self._fail(req, future, exc)
            return
        except Exception as exc:
            self._fail(req, future, BackendError(f"{type(exc).__name__}: {exc}"))
            return
        timings = PhaseTimings(t_init / 1e9, connect_ns / 1e9, wait_ns / 1e9)
        self._count(requests=1, tokens_in=tokens_in, tokens_out=tokens_out,
                    t_init=t_init, t_connect=connect_ns, t_wait=wait_ns)
        self._resolve(future, LlmResponse(req.request_id, text, tokens_in, tokens_out, timings))

    def _fail(self, req, future, exc: BackendError):
        if exc.request_id is None:
            exc.request_id = req.request_id
            exc.args = (f"[{req.request_id}] {exc.args[0] if exc.args else ''}",)
        self._count(requests=1, errors=1)
        self._resolve(future, exc=exc)

    async def _discard(self, conn):
        try:
            await self.backend.close(conn)
        except Exception:  # a broken connection may fail to close cleanly
            pass
        self.pool.free_slot()

    def _spawn_local(self, task: LocalTask, future):
        self._loop.create_task(self._run_local(task, future))

    async def _run_local(self, task: LocalTask, future):
        gate = self._workers if self.config.offload else self._cpu
        async with gate:
            try:
                if self._driven:
                    result = task.fn(task.payload)
                    if task.cost:
                        await asyncio.sleep(task.cost)
                elif self.config.offload:
                    result = await self._loop.run_in_executor(self._executor, task.fn, task.payload)
                else:
                    result = task.fn(task.payload)
            except Exception as exc:
                self._resolve(future, exc=exc)
                return
        with self._lock:
            self._counters["local_tasks"] += 1
            self._mailboxes[task.agent_id].append((task.task_id, result))
        self._resolve(future, result)

    async def _teardown(self):
        if hasattr(self, "_dispatcher"):
            self._dispatcher.cancel()
            await asyncio.gather(self._dispatcher, return_exceptions=True)
        for conn in self.pool.drain_idle():
            try:
                await self.backend.close(conn)
            except Exception:
                pass


async def _settled(future: concurrent.futures.Future):
    wrapped = asyncio.wrap_future(future)
    await asyncio.wait([wrapped])
    if not wrapped.cancelled():
        wrapped.exception()  # the caller reads the outcome from ``future``


class LlmClient:
    """Blocking prompt-in/text-out facade over a :class:`Gateway`.

    ``now`` is stamped into ``created_at`` and should track simulation time.
    """

    def __init__(self, gateway: Gateway, prefix: str = "r"):
        from ..backends.tokens import count_tokens

        self.gateway = gateway
        self.prefix = prefix
        self.now = 0.0
        self._ids = itertools.count()
        self._count_tokens = count_tokens

    def make_request(self, prompt: str, agent_ids: Iterable = (0,)) -> LlmRequest:
        return LlmRequest(
            request_id=f"{self.prefix}{next(self._ids):08d}",
            agent_ids=tuple(agent_ids),
            prompt=prompt,
            est_input_tokens=max(1, self._count_tokens(prompt)),
            created_at=self.now,
        )

    def submit(self, prompt: str, agent_ids: Iterable = (0,)) -> ResponseHandle:
        return self.gateway.submit(self.make_request(prompt, agent_ids))

    def complete(self, prompt: str, agent_ids: Iterable = (0,)) -> str:
        return self.submit(prompt, agent_ids).result().text

    def complete_many(self, items: Iterable[tuple[str, Iterable]]) -> list:
        """Submit every ``(prompt, agent_ids)`` at once, then join.

        Failed requests come back as their :class:`BackendError` instead of
        raising, so one bad request does not sink the batch.
        """
        handles = [self.submit(prompt, ids) for prompt, ids in items]
        out = []
        for h in handles:
            try:
                out.append(h.result())
            except BackendError as exc:
                out.append(exc)
        return out
