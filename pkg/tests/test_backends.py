import json
import pytest
from hypothesis import given, settings, strategies as st

from citysim import prompts as P
from citysim.backends.http import HttpBackend, build_body, parse_body
from citysim.backends.latency import LatencyModel
from citysim.backends.mock import MockBackend, mock_respond
from citysim.backends.oracle import draw, mode, oracle_distribution, unit_hash
from citysim.backends.tokens import count_tokens
from citysim.errors import BackendError, EmptyCandidates, MalformedPrompt, TransportError
from citysim.gateway.core import Gateway, GatewayConfig, LlmClient
from citysim.gateway.types import LlmRequest
from citysim.optimizer.distill import render_slot
from citysim.profile import StaticProfile

from conftest import StubHandler

ALICE = StaticProfile(1, 34, "female", "teacher", "master", 3, "0_0")
BOB = StaticProfile(2, 67, "male", "retiree", "secondary", 2, "0_1")


def choice_vars(cands="P1 food 0.10km; P2 food 0.20km; P3 food 0.30km", t="day 1 12:00", attempt=0):
    return {"time": t, "attempt": attempt, "intention": "lunch (food)", "memory": P.NO_CONTEXT,
            "candidates": cands}


def raw_prompt(profile, **kw):
    return P.choice_prompt(profile, choice_vars(**kw)).render()


# -- latency and tokens ------------------------------------------------------------------


def test_wait_formula():
    lm = LatencyModel(0.005, 0.020, 0.0, 0.200, 0.0001)
    assert lm.wait_for(100, 50) == pytest.approx(0.215, abs=1e-12)


def test_latency_rejects_negative():
    with pytest.raises(ValueError):
        LatencyModel(t_wait_base=-1)


def test_mock_respond_timings_follow_model():
    lm = LatencyModel(0.005, 0.020, 0.0, 0.200, 0.0001)
    prompt = " ".join(["w"] * 100)
    resp = mock_respond(LlmRequest("x", (0,), prompt, 100), lm, seed=0)
    assert resp.input_tokens == 100
    assert resp.timings.t_transfer_wait == pytest.approx(0.2 + 0.0001 * (100 + resp.output_tokens))


@given(st.text())
def test_token_count_is_word_count(text):
    assert count_tokens(text) == len(text.split())


def test_reported_input_tokens_equal_stub_count():
    mock = MockBackend(LatencyModel(), 0)
    prompt = raw_prompt(ALICE)
    resp = mock.respond(LlmRequest("x", (1,), prompt, 3))
    assert resp.input_tokens == count_tokens(prompt)


# -- oracle -------------------------------------------------------------------------------


def test_single_candidate_gets_all_mass():
    assert oracle_distribution(ALICE, ["P9"], 0) == {"P9": 1.0}


def test_empty_candidates_rejected():
    with pytest.raises(EmptyCandidates):
        oracle_distribution(ALICE, [], 0)


@given(st.permutations(["P1", "P2", "P3", "P4", "P5"]), st.integers(0, 1000))
def test_oracle_permutation_invariant(order, seed):
    base = oracle_distribution(ALICE, ["P1", "P2", "P3", "P4", "P5"], seed)
    assert oracle_distribution(ALICE, order, seed) == base
    assert abs(sum(base.values()) - 1.0) < 1e-12


def test_oracle_is_persona_sensitive():
    cands = [f"P{i}" for i in range(10)]
    a, b = oracle_distribution(ALICE, cands, 0), oracle_distribution(BOB, cands, 0)
    assert a != b
    assert oracle_distribution(ALICE, cands, 0) == a


def test_oracle_ignores_identity_and_home():
    twin = StaticProfile(99, 34, "female", "teacher", "master", 3, "5_5")
    cands = ["P1", "P2", "P3"]
    assert oracle_distribution(twin, cands, 4) == oracle_distribution(ALICE, cands, 4)


def test_draw_and_mode():
    dist = {"B": 0.25, "A": 0.75}
    assert draw(dist, 0.0) == "A"
    assert draw(dist, 0.74) == "A"
    assert draw(dist, 0.75) == "B"
    assert mode({"B": 0.5, "A": 0.5}) == "A"


def test_unit_hash_range_and_determinism():
    vals = [unit_hash(1, "x", i) for i in range(1000)]
    assert all(0 <= v < 1 for v in vals)
    assert vals == [unit_hash(1, "x", i) for i in range(1000)]


# -- mock backend ---------------------------------------------------------------------


def test_raw_choice_deterministic():
    mock = MockBackend(seed=5)
    prompt = raw_prompt(ALICE)
    answers = {mock.respond_text(prompt) for _ in range(5)}
    assert len(answers) == 1
    assert answers.pop().split()[0] in {"P1", "P2", "P3"}


def test_argmax_mode_returns_oracle_mode():
    mock = MockBackend(seed=5, choice_mode="argmax")
    dist = oracle_distribution(ALICE, ["P1", "P2", "P3"], 5)
    assert mock.respond_text(raw_prompt(ALICE)).split()[0] == mode(dist)


def test_draws_follow_oracle_distribution():
    mock = MockBackend(seed=2)
    cands = "; ".join(f"P{i} food 0.1km" for i in range(4))
    picks = [mock.respond_text(raw_prompt(ALICE, cands=cands, attempt=k)).split()[0] for k in range(4000)]
    dist = oracle_distribution(ALICE, [f"P{i}" for i in range(4)], 2)
    for c, p in dist.items():
        assert picks.count(c) / len(picks) == pytest.approx(p, abs=0.03)


def test_distill_prompt_with_five_agents_has_five_answers():
    mock = MockBackend(seed=1)
    slots = "\n".join(render_slot(i, choice_vars()) for i in range(5))
    from citysim.backends.mock import group_description

    prompt = P.tag(P.DISTILL, "\n".join([
        "### FUNCTION", P.CHOICE_FUNCTION, "### GROUP", group_description(ALICE.persona),
        "### AGENTS", slots, "### ANSWER FORMAT", "one line per agent"]))
    lines = mock.respond_text(prompt).splitlines()
    assert [ln.split(":")[0] for ln in lines] == ["0", "1", "2", "3", "4"]


def test_batch_answers_equal_raw_answers():
    mock = MockBackend(seed=3)
    raws = [P.choice_prompt(p, choice_vars()) for p in (ALICE, BOB)]
    lines = mock.respond_text(P.batch_prompt(raws)).splitlines()
    for raw, line in zip(raws, lines):
        agent, answer = line.split(": ", 1)
        assert int(agent) == raw.agent_id
        assert answer == mock.respond_text(raw.render())


def test_unknown_schema_is_malformed():
    with pytest.raises(MalformedPrompt):
        MockBackend().respond_text("[schema:nonsense]\nhello")


def test_untagged_prompt_gets_ok():
    assert MockBackend().respond_text("hello") == "OK."


def test_plan_templates_keyed_on_occupation():
    mock = MockBackend(seed=0)
    worker = mock.respond_text(P.plan_prompt(ALICE, "2025-01-06", ""))
    retiree = mock.respond_text(P.plan_prompt(BOB, "2025-01-06", ""))
    assert "| work" in worker
    assert "| work" not in retiree


def test_interrogate_echoes_memories():
    mock = MockBackend()
    text = mock.respond_text(P.interrogate_prompt(ALICE, ["[3] went to P1 (food)"], "where?"))
    assert "[3] went to P1 (food)" in text
    assert "no relevant memory" in mock.respond_text(P.interrogate_prompt(ALICE, [], "where?"))


# -- http backend contract ---------------------------------------------------------------


def test_body_roundtrip():
    body = build_body("m", "hi there", 0.3)
    assert body == {"model": "m", "messages": [{"role": "user", "content": "hi there"}], "temperature": 0.3}
    assert parse_body(json.dumps({"choices": [{"message": {"content": "yo"}}]})) == "yo"
    with pytest.raises(BackendError):
        parse_body(b"{}")
    with pytest.raises(BackendError):
        parse_body(b"not json")


def test_http_contract_keep_alive(stub_server, monkeypatch):
    monkeypatch.setenv("OPENCITY_API_KEY", "k-123")
    backend = HttpBackend(stub_server, "test-model", temperature=0.2)
    gw = Gateway(backend, GatewayConfig(pool_capacity=2), clock="real")
    client = LlmClient(gw)
    out = client.complete_many([(f"hello number {i}", (i,)) for i in range(10)])
    gw.shutdown()
    assert [r.text for r in out] == [f"echo: hello number {i}" for i in range(10)]
    assert out[3].input_tokens == 3 and out[3].output_tokens == 4
    stats = gw.gateway_stats()
    assert stats.connections_created <= 2
    assert stats.connections_reused >= 8
    assert len({e["port"] for e in StubHandler.log}) <= 2  # requests rode on kept-alive sockets
    first = StubHandler.log[0]
    assert first["path"] == "/v1/chat/completions"
    assert first["body"]["model"] == "test-model"
    assert first["body"]["temperature"] == 0.2
    assert first["auth"] == "Bearer k-123"


def test_http_errors_map_to_backend_error(stub_server):
    gw = Gateway(HttpBackend(stub_server, "m", api_key=""), GatewayConfig(), clock="real")
    client = LlmClient(gw)
    bad, garbage, good = client.complete_many([("fail please", (0,)), ("garbage please", (1,)), ("ok", (2,))])
    gw.shutdown()
    assert isinstance(bad, BackendError) and "500" in str(bad)
    assert isinstance(garbage, BackendError)
    assert good.text == "echo: ok"


def test_http_unreachable_is_transport_error():
    import socket

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    gw = Gateway(HttpBackend(f"http://127.0.0.1:{port}/x", "m", timeout=2), GatewayConfig(), clock="real")
    with pytest.raises(BackendError) as info:
        LlmClient(gw).complete("hello")
    gw.shutdown()
    assert isinstance(info.value, TransportError)


def test_http_rejects_bad_scheme():
    with pytest.raises(ValueError):
        HttpBackend("ftp://x/y", "m")


@settings(max_examples=30, deadline=None)
@given(st.text(min_size=1, max_size=200))
def test_body_content_roundtrip(text):
    body = build_body("m", text, 0.0)
    reply = json.dumps({"choices": [{"message": body["messages"][0]}]})
    assert parse_body(reply) == text
