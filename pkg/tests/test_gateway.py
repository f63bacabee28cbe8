import math
import threading

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from citysim.backends.latency import LatencyModel
from citysim.backends.mock import MockBackend
from citysim.errors import BackendError, GatewayClosed, HandleConsumed, WorkerPoolClosed
from citysim.gateway.core import Gateway, GatewayConfig, LlmClient
from citysim.gateway.desim import overlap_bound, predict_makespan
from citysim.gateway.types import GatewayStats, LlmRequest, LocalTask, TaskKind

from conftest import BENCH_LM, make_gateway, ping_all


def req(i, prompt="hello there", created_at=0.0):
    return LlmRequest(f"r{i:04d}", (i,), prompt, 2, created_at)


def test_single_request_wait_phase():
    gw = make_gateway()
    resp = gw.submit(req(1)).result()
    gw.shutdown()
    assert resp.request_id == "r0001"
    assert resp.timings.t_transfer_wait == pytest.approx(0.200, abs=1e-9)
    assert resp.timings.t_init == pytest.approx(0.005, abs=1e-9)
    assert resp.timings.t_connect == pytest.approx(0.020, abs=1e-9)


def test_hundred_requests_match_hand_computed_makespan():
    # waves of 8: the last request (wave 12, slot 3) finishes at 425 + 15 + 11 * 200 ms
    gw = make_gateway(pool_capacity=8)
    ping_all(gw, 100)
    gw.shutdown()
    stats = gw.gateway_stats()
    assert stats.wall_time == pytest.approx(2.640, abs=1e-9)
    assert stats.wall_time < 100 * 0.225


def test_sequential_baseline_makespan():
    gw = make_gateway(pool_capacity=8, scheduler="sequential", reuse_connections=False)
    ping_all(gw, 20)
    gw.shutdown()
    assert gw.gateway_stats().wall_time == pytest.approx(20 * 0.225, abs=1e-9)


def test_sequential_with_reuse_pays_one_connect():
    gw = make_gateway(scheduler="sequential")
    ping_all(gw, 10)
    gw.shutdown()
    s = gw.gateway_stats()
    assert s.wall_time == pytest.approx(0.020 + 10 * 0.205, abs=1e-9)
    assert s.connections_created == 1


@pytest.mark.parametrize("n", [1, 10, 100])
@pytest.mark.parametrize("capacity", [1, 4, 8])
def test_makespan_matches_event_model_and_bound(n, capacity):
    gw = make_gateway(pool_capacity=capacity)
    ping_all(gw, n)
    gw.shutdown()
    wall = gw.gateway_stats().wall_time
    predicted = predict_makespan([0.2] * n, BENCH_LM, capacity)
    assert wall == pytest.approx(predicted, rel=1e-9)
    eps = 0.05 * wall
    assert wall <= overlap_bound(n, BENCH_LM, capacity) + eps
    assert wall <= n * (0.005 + 0.020 + 0.200)


def test_submit_after_shutdown():
    gw = make_gateway()
    gw.shutdown()
    with pytest.raises(GatewayClosed):
        gw.submit(req(1))


def test_offload_after_shutdown():
    gw = make_gateway()
    gw.shutdown()
    with pytest.raises(WorkerPoolClosed):
        gw.offload_local_task(LocalTask("t1", 0, TaskKind.OTHER, lambda x: x, 1))


def test_handle_awaited_twice():
    gw = make_gateway()
    h = gw.submit(req(1))
    assert h.result().request_id == "r0001"
    with pytest.raises(HandleConsumed):
        h.result()
    gw.shutdown()


def test_injected_failure_carries_request_id():
    gw = make_gateway(backend_options={"fail_requests": frozenset({"r0002"})})
    h1, h2 = gw.submit(req(1)), gw.submit(req(2))
    assert h1.result().text == "OK."
    with pytest.raises(BackendError) as info:
        h2.result()
    assert info.value.request_id == "r0002"
    gw.shutdown()
    assert gw.gateway_stats().errors_total == 1


def test_transport_error_retried_once():
    gw = make_gateway(backend_options={"transport_failures": 1})
    assert gw.submit(req(1)).result().text == "OK."
    gw.shutdown()
    assert gw.gateway_stats().errors_total == 0


def test_transport_error_twice_fails():
    gw = make_gateway(backend_options={"transport_failures": 2})
    with pytest.raises(BackendError):
        gw.submit(req(1)).result()
    gw.shutdown()


def test_duplicate_request_id_rejected():
    gw = make_gateway()
    gw.submit(req(1))
    with pytest.raises(ValueError):
        gw.submit(req(1))
    gw.shutdown()


def test_dispatch_order_observed_by_backend():
    seen = []

    class Recording(MockBackend):
        async def exchange(self, conn, request, payload):
            seen.append(request.request_id)
            return await super().exchange(conn, request, payload)

    gw = Gateway(Recording(BENCH_LM), GatewayConfig(scheduler="sequential"))
    hs = [gw.submit(LlmRequest("a", (0,), "x", 1, 5.0)), gw.submit(LlmRequest("c", (1,), "x", 1, 1.0)),
          gw.submit(LlmRequest("b", (2,), "x", 1, 1.0))]
    for h in hs:
        h.result()
    gw.shutdown()
    assert seen == ["b", "c", "a"]


def test_stats_zero_before_any_request():
    gw = make_gateway()
    s = gw.gateway_stats()
    gw.shutdown()
    assert s.requests_total == s.tokens_in_total == s.connections_created == 0
    assert s == GatewayStats(wall_time_ns=s.wall_time_ns)


def test_reuse_bounds_connections():
    gw = make_gateway(pool_capacity=8)
    ping_all(gw, 100)
    gw.shutdown()
    s = gw.gateway_stats()
    assert s.connections_created <= 8
    assert s.connections_created + s.connections_reused == 100
    assert s.per_phase_sums.t_connect <= 8 * 0.020 + 1e-12


def test_reuse_off_opens_one_connection_per_request():
    gw = make_gateway(pool_capacity=8, reuse_connections=False)
    ping_all(gw, 100)
    gw.shutdown()
    s = gw.gateway_stats()
    assert s.connections_created == 100
    assert s.t_connect_ns == 100 * 20_000_000


def test_pool_bound_never_exceeded():
    live = {"now": 0, "peak": 0}

    class Counting(MockBackend):
        async def exchange(self, conn, request, payload):
            live["now"] += 1
            live["peak"] = max(live["peak"], live["now"])
            try:
                return await super().exchange(conn, request, payload)
            finally:
                live["now"] -= 1

    gw = Gateway(Counting(BENCH_LM), GatewayConfig(pool_capacity=3))
    ping_all(gw, 50)
    gw.shutdown()
    assert live["peak"] == 3


def _makespan_with_tasks(offload, n_tasks, cost=0.05, workers=4):
    gw = make_gateway(pool_capacity=8, offload=offload, worker_count=workers)
    client = LlmClient(gw)
    handles = [client.submit(f"ping {i}", (i,)) for i in range(10)]
    tasks = [gw.offload_local_task(LocalTask(f"t{i}", i, TaskKind.MEMORY_UPDATE, lambda x: x * 2, i, cost))
             for i in range(n_tasks)]
    responses = [h.result() for h in handles]
    for t in tasks:
        t.result()
    gw.shutdown()
    return gw.gateway_stats().wall_time, [r.timings for r in responses]


def test_offloaded_task_does_not_delay_dispatch():
    base, base_t = _makespan_with_tasks(True, 0)
    with_task, task_t = _makespan_with_tasks(True, 1)
    assert with_task == base
    assert task_t == base_t


def test_offload_property_bounds_added_time():
    base, _ = _makespan_with_tasks(True, 0)
    n, cost, workers = 40, 0.05, 4
    budget = n * cost
    offloaded, _ = _makespan_with_tasks(True, n, cost, workers)
    inline, _ = _makespan_with_tasks(False, n, cost, workers)
    assert offloaded - base <= budget / workers + 0.05 * base
    # without offload the dispatcher pays for the CPU work itself
    assert inline - base >= budget - 0.05 * base


def test_mailbox_receives_task_results():
    gw = make_gateway(worker_count=4)
    handles = [gw.offload_local_task(LocalTask(f"q{i}", i % 3, TaskKind.SPATIAL_QUERY, lambda x: x + 1, i))
               for i in range(1000)]
    results = sorted(h.result() for h in handles)
    assert results == list(range(1, 1001))
    boxes = [gw.mailbox(a) for a in range(3)]
    gw.shutdown()
    assert sum(len(b) for b in boxes) == 1000
    assert gw.mailbox(0) == []
    assert gw.gateway_stats().local_tasks_total == 1000


def test_failing_local_task_raises_on_result():
    gw = make_gateway()

    def boom(_):
        raise RuntimeError("bad task")

    h = gw.offload_local_task(LocalTask("t", 0, TaskKind.OTHER, boom))
    with pytest.raises(RuntimeError):
        h.result()
    gw.shutdown()


def test_stats_deterministic():
    def run():
        gw = make_gateway(lm=LatencyModel(), pool_capacity=4)
        ping_all(gw, 37)
        gw.shutdown()
        return gw.gateway_stats()

    assert run() == run()


def test_stats_flat_dict_roundtrip():
    gw = make_gateway()
    ping_all(gw, 5)
    gw.shutdown()
    s = gw.gateway_stats()
    d = s.to_dict()
    assert all(not isinstance(v, (dict, list)) for v in d.values())
    assert GatewayStats.from_dict(d) == s


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(n=st.integers(1, 40), capacity=st.integers(1, 6), reuse=st.booleans(),
       sequential=st.booleans(), fail=st.sets(st.integers(0, 39), max_size=5),
       transport=st.integers(0, 3))
def test_no_request_loss(n, capacity, reuse, sequential, fail, transport):
    options = {"fail_requests": frozenset(f"r{i:08d}" for i in fail), "transport_failures": transport}
    gw = make_gateway(pool_capacity=capacity, reuse_connections=reuse,
                      scheduler="sequential" if sequential else "async", backend_options=options)
    out = ping_all(gw, n)
    gw.shutdown()
    assert len(out) == n
    errors = [r for r in out if isinstance(r, Exception)]
    assert {e.request_id for e in errors} >= {f"r{i:08d}" for i in fail if i < n}
    s = gw.gateway_stats()
    assert s.requests_total == n
    assert s.errors_total == len(errors)
    # failed exchanges drop their connection, so each failure may cost one more connect
    broken = transport + len(errors)
    assert s.connections_created <= (capacity + broken if reuse else n + transport)


def test_real_clock_mode_with_threads():
    lm = LatencyModel(t_init=0.0, t_connect=0.001, t_wait_base=0.01, t_per_token=0.0)
    gw = make_gateway(lm=lm, clock="real", pool_capacity=4)
    client_lock = threading.Lock()
    client = LlmClient(gw)
    results = []

    def worker(k):
        with client_lock:
            handles = [client.submit(f"ping {k} {i}", (k,)) for i in range(5)]
        results.extend(h.result().text for h in handles)

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    task = gw.offload_local_task(LocalTask("t", 0, TaskKind.SPATIAL_QUERY, math.sqrt, 16.0))
    assert task.result() == 4.0
    gw.shutdown()
    assert results == ["OK."] * 20
    s = gw.gateway_stats()
    assert s.requests_total == 20
    assert s.connections_created <= 4
    assert s.wall_time > 0
