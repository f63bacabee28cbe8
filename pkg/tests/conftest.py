import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from citysim.backends.latency import LatencyModel
from citysim.backends.mock import MockBackend
from citysim.environment import gen_synthetic_city
from citysim.gateway.core import Gateway, GatewayConfig, LlmClient

BENCH_LM = LatencyModel(t_init=0.005, t_connect=0.020, t_teardown=0.0, t_wait_base=0.200, t_per_token=0.0)


def make_gateway(lm=BENCH_LM, seed=0, clock="virtual", backend_options=None, **config):
    backend = MockBackend(lm, seed, **(backend_options or {}))
    return Gateway(backend, GatewayConfig(**config), clock=clock)


def ping_all(gw, n, prefix="r"):
    client = LlmClient(gw, prefix)
    return client.complete_many([(f"ping from agent {i}", (i,)) for i in range(n)])


@pytest.fixture
def bench_lm():
    return BENCH_LM


@pytest.fixture(scope="session")
def small_city():
    return gen_synthetic_city(16, 6, 0.6, seed=3)


@pytest.fixture(scope="session")
def city100():
    return gen_synthetic_city(100, 8, 0.6, seed=0)


class StubHandler(BaseHTTPRequestHandler):
    """Chat-completions stand-in: echoes the prompt; keeps connections alive."""

    protocol_version = "HTTP/1.1"
    log = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).log.append({"path": self.path, "body": body, "port": self.client_address[1],
                               "auth": self.headers.get("Authorization")})
        prompt = body["messages"][-1]["content"]
        if prompt == "fail please":
            status, out = 500, b'{"error": "boom"}'
        elif prompt == "garbage please":
            status, out = 200, b'{"nothing": []}'
        else:
            status = 200
            out = json.dumps({"choices": [{"message": {"role": "assistant",
                                                        "content": f"echo: {prompt}"}}]}).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    StubHandler.log = []
    server = ThreadingHTTPServer(("127.0.0.1", 0), StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    server.shutdown()
    server.server_close()


# -- acceptance summary -----------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
