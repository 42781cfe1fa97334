"""Local chat-completions stub used by tests, demos and offline replays.

The responder receives the decoded request JSON and returns either a string
(sent as the assistant message), or a ``(status, body)`` tuple for scripted
failures.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Iterable, Union

Reply = Union[str, tuple[int, Any]]
Responder = Callable[[dict[str, Any]], Reply]


def completion_body(text: str, model: str = "stub") -> dict[str, Any]:
    return {
        "id": "stub-0",
        "object": "chat.completion",
        "model": model,
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
    }


def scripted(replies: Iterable[Reply]) -> Responder:
    """Responder that plays ``replies`` in order and repeats the last one."""
    replies = list(replies)
    lock = threading.Lock()
    state = {"i": 0}

    def respond(_request: dict[str, Any]) -> Reply:
        with lock:
            i = min(state["i"], len(replies) - 1)
            state["i"] += 1
        return replies[i]

    return respond


def system_prompt(request: dict[str, Any]) -> str:
    for msg in request.get("messages", []):
        if msg.get("role") == "system":
            return str(msg.get("content", ""))
    return ""


def user_text(request: dict[str, Any]) -> str:
    texts = []
    for msg in request.get("messages", []):
        if msg.get("role") != "user":
            continue
        content = msg.get("content")
        if isinstance(content, str):
            texts.append(content)
        else:
            texts.extend(p.get("text", "") for p in content if p.get("type") == "text")
    return "\n".join(texts)


def has_image(request: dict[str, Any]) -> bool:
    for msg in request.get("messages", []):
        content = msg.get("content")
        if isinstance(content, list) and any(p.get("type") == "image_url" for p in content):
            return True
    return False


class StubChatServer:
    """Threaded HTTP server on localhost; use as a context manager."""

    def __init__(self, responder: Responder, delay: float = 0.0):
        self.responder = responder
        self.delay = delay
        self.requests: list[dict[str, Any]] = []
        self.raw_bodies: list[bytes] = []
        self.headers: list[dict[str, str]] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler_class())
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def _handler_class(self):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                with stub._lock:
                    stub.in_flight += 1
                    stub.max_in_flight = max(stub.max_in_flight, stub.in_flight)
                    stub.raw_bodies.append(raw)
                    stub.headers.append(dict(self.headers))
                try:
                    try:
                        request = json.loads(raw)
                    except json.JSONDecodeError:
                        request = {}
                    with stub._lock:
                        stub.requests.append(request)
                    if stub.delay:
                        time.sleep(stub.delay)
                    reply = stub.responder(request)
                finally:
                    with stub._lock:
                        stub.in_flight -= 1
                if isinstance(reply, tuple):
                    status, body = reply
                else:
                    status, body = 200, completion_body(reply, request.get("model", "stub"))
                data = body if isinstance(body, bytes) else json.dumps(body).encode("utf-8")
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass  # client gave up (timeout tests)

        return Handler

    def start(self) -> "StubChatServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "StubChatServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
