"""Chat-completion client over persistent HTTP/1.1 connections.

Each pooled connection is an asyncio stream pair driven by an ``h11`` state
machine, so one connection carries many sequential request/response cycles
(keep-alive) and many connections are multiplexed on the gateway's event
loop.

Wire format::

    POST <path>  {"model": str, "messages": [{"role": ..., "content": ...}], "temperature": float}
    200          {"choices": [{"message": {"content": str}}], ...}

The API key is read from ``OPENCITY_API_KEY`` and sent as a bearer token.
"""
from __future__ import annotations

import asyncio
import json
import os
import ssl
from dataclasses import dataclass
from urllib.parse import urlsplit

import h11

from ..errors import BackendError, TransportError
from ..gateway.types import LlmRequest
from .tokens import count_tokens

API_KEY_ENV = "OPENCITY_API_KEY"
_READ_CHUNK = 65536


def build_body(model: str, prompt: str, temperature: float, system: str | None = None) -> dict:
    messages = []
    if system:
        messages.append({"role": "system", "content": system})
    messages.append({"role": "user", "content": prompt})
    return {"model": model, "messages": messages, "temperature": temperature}


def parse_body(payload: bytes | str) -> str:
    """Extract ``choices[0].message.content`` or raise :class:`BackendError`."""
    try:
        doc = json.loads(payload)
        content = doc["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise BackendError(f"unexpected response body: {exc}") from exc
    if not isinstance(content, str):
        raise BackendError("response content is not a string")
    return content


@dataclass
class _Conn:
    reader: asyncio.StreamReader
    writer: asyncio.StreamWriter
    proto: h11.Connection


class HttpBackend:
    def __init__(self, url: str, model: str, temperature: float = 0.0,
                 timeout: float = 120.0, system_prompt: str | None = None,
                 api_key: str | None = None):
        parts = urlsplit(url)
        if parts.scheme not in ("http", "https"):
            raise ValueError(f"unsupported URL scheme in {url!r}")
        self.url = url
        self.host = parts.hostname
        self.port = parts.port or (443 if parts.scheme == "https" else 80)
        self.path = (parts.path or "/") + (f"?{parts.query}" if parts.query else "")
        self.tls = parts.scheme == "https"
        self.model = model
        self.temperature = temperature
        self.timeout = timeout
        self.system_prompt = system_prompt
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)

    async def prepare(self, req: LlmRequest) -> bytes:
        body = build_body(self.model, req.prompt, self.temperature, self.system_prompt)
        return json.dumps(body).encode()

    async def connect(self) -> _Conn:
        ctx = ssl.create_default_context() if self.tls else None
        try:
            reader, writer = await asyncio.wait_for(
                asyncio.open_connection(self.host, self.port, ssl=ctx), self.timeout)
        except (OSError, asyncio.TimeoutError) as exc:
            raise TransportError(f"connect to {self.host}:{self.port} failed: {exc}") from exc
        return _Conn(reader, writer, h11.Connection(h11.CLIENT))

    async def exchange(self, conn: _Conn, req: LlmRequest, payload: bytes):
        headers = [
            ("Host", self.host if self.port in (80, 443) else f"{self.host}:{self.port}"),
            ("Content-Type", "application/json"),
            ("Content-Length", str(len(payload))),
            ("Connection", "keep-alive"),
        ]
        if self.api_key:
            headers.append(("Authorization", f"Bearer {self.api_key}"))
        proto = conn.proto
        try:
            if proto.our_state is h11.DONE and proto.their_state is h11.DONE:
                proto.start_next_cycle()
            data = proto.send(h11.Request(method="POST", target=self.path, headers=headers))
            data += proto.send(h11.Data(data=payload))
            data += proto.send(h11.EndOfMessage())
            conn.writer.write(data)
            await conn.writer.drain()
            status, body = await asyncio.wait_for(self._read_response(conn), self.timeout)
        except (OSError, asyncio.IncompleteReadError, h11.ProtocolError, asyncio.TimeoutError) as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if status != 200:
            raise BackendError(f"HTTP {status}: {body[:200].decode(errors='replace')}")
        text = parse_body(body)
        return text, count_tokens(req.prompt), count_tokens(text)

    async def _read_response(self, conn: _Conn):
        proto = conn.proto
        status = None
        chunks = []
        while True:
            event = proto.next_event()
            if event is h11.NEED_DATA:
                data = await conn.reader.read(_READ_CHUNK)
                proto.receive_data(data)
                if not data and proto.their_state is not h11.DONE:
                    raise asyncio.IncompleteReadError(b"", None)
                continue
            if isinstance(event, h11.Response):
                status = event.status_code
            elif isinstance(event, h11.Data):
                chunks.append(bytes(event.data))
            elif isinstance(event, (h11.EndOfMessage, h11.ConnectionClosed)):
                return status, b"".join(chunks)

    async def close(self, conn: _Conn) -> None:
        conn.writer.close()
        try:
            await conn.writer.wait_closed()
        except OSError:
            pass
