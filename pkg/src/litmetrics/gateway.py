"""Client for OpenAI-compatible ``/v1/chat/completions`` endpoints.

Handles image attachments (as ``data:`` URIs), bounded retries with
exponential backoff, a per-endpoint in-flight cap, and recovery of JSON
payloads from chatty model output.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Union

import httpx
import numpy as np
from PIL import Image

from .errors import PayloadError, RequestError, TransportError

log = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 1.0
    max_delay: float = 30.0
    jitter: bool = True

    def delay(self, attempt: int, rng: random.Random | None = None) -> float:
        """Sleep before retry number ``attempt`` (1-based)."""
        d = min(self.max_delay, self.base_delay * 2 ** (attempt - 1))
        if self.jitter and d > 0:
            d = (rng or random).uniform(d / 2, d)
        return d


@dataclass(frozen=True)
class ModelEndpoint:
    base_url: str
    model_name: str
    auth_token: str = field(default="", repr=False)
    max_parallel: int = 4
    timeout: float = 120.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    temperature: float = 0.0
    max_tokens: int | None = 2048
    jpeg_quality: int | None = 90
    json_mode: bool = False

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")

    @property
    def url(self) -> str:
        base = self.base_url.rstrip("/")
        if base.endswith("/chat/completions"):
            return base
        if not base.endswith("/v1"):
            base += "/v1"
        return base + "/chat/completions"

    def describe(self) -> str:
        return f"{self.model_name}@{self.base_url}"

    def redacted(self) -> dict[str, Any]:
        return {
            "base_url": self.base_url,
            "model_name": self.model_name,
            "auth_token": "***" if self.auth_token else "",
            "max_parallel": self.max_parallel,
            "timeout": self.timeout,
            "retry": {
                "max_attempts": self.retry.max_attempts,
                "base_delay": self.retry.base_delay,
                "max_delay": self.retry.max_delay,
            },
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "jpeg_quality": self.jpeg_quality,
        }


@dataclass(frozen=True)
class ImagePart:
    data: bytes = field(repr=False)
    media_type: str = "image/png"

    def __post_init__(self):
        if not self.data:
            raise ValueError("image part has an empty payload")

    def data_uri(self) -> str:
        return f"data:{self.media_type};base64,{base64.b64encode(self.data).decode('ascii')}"

    @classmethod
    def from_array(cls, image: np.ndarray, jpeg_quality: int | None = 90) -> "ImagePart":
        im = Image.fromarray(image)
        buf = io.BytesIO()
        if jpeg_quality is None:
            im.save(buf, format="PNG")
            return cls(buf.getvalue(), "image/png")
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        im.save(buf, format="JPEG", quality=jpeg_quality)
        return cls(buf.getvalue(), "image/jpeg")


Part = Union[str, ImagePart]


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_parts: tuple[Part, ...]
    response_format_hint: str | None = None  # None or "json"

    def __post_init__(self):
        if not self.user_parts:
            raise ValueError("a chat request needs at least one user part")

    def to_payload(self, endpoint: ModelEndpoint) -> dict[str, Any]:
        content: list[dict[str, Any]] = []
        for part in self.user_parts:
            if isinstance(part, ImagePart):
                content.append({"type": "image_url", "image_url": {"url": part.data_uri()}})
            else:
                content.append({"type": "text", "text": part})
        payload: dict[str, Any] = {
            "model": endpoint.model_name,
            "messages": [
                {"role": "system", "content": self.system_prompt},
                {"role": "user", "content": content},
            ],
            "temperature": endpoint.temperature,
        }
        if endpoint.max_tokens is not None:
            payload["max_tokens"] = endpoint.max_tokens
        if self.response_format_hint == "json" and endpoint.json_mode:
            payload["response_format"] = {"type": "json_object"}
        return payload


@dataclass(frozen=True)
class ModelResponse:
    raw_text: str
    parsed_json: Any = None
    attempt_count: int = 1
    latency: float = 0.0
    model_name: str = ""


# ---------------------------------------------------------------- JSON recovery

_FENCE = re.compile(r"```[ \t]*([A-Za-z0-9_-]*)[ \t]*\r?\n?(.*?)```", re.DOTALL)
_decoder = json.JSONDecoder()


def _excerpt(text: str, limit: int = 200) -> str:
    return text if len(text) <= limit else text[:limit] + "..."


def extract_json_payload(raw_text: str) -> Any:
    """Recover a JSON value from model output.

    Fenced blocks are tried first; otherwise the first ``{`` or ``[`` that
    starts a complete JSON document wins.
    """
    for match in _FENCE.finditer(raw_text):
        body = match.group(2).strip()
        if not body:
            continue
        try:
            return json.loads(body)
        except json.JSONDecodeError:
            pass
    stripped = raw_text.strip()
    if stripped:
        try:
            return json.loads(stripped)
        except json.JSONDecodeError:
            pass
    for i, ch in enumerate(raw_text):
        if ch in "{[":
            try:
                value, _ = _decoder.raw_decode(raw_text, i)
            except json.JSONDecodeError:
                continue
            return value
    raise PayloadError(f"no parseable JSON in model output: {_excerpt(raw_text)!r}")


# ---------------------------------------------------------------- transport


def _message_text(body: Any) -> str:
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise PayloadError(f"malformed chat-completions response: {_excerpt(json.dumps(body))}") from None
    if content is None:
        return ""
    if isinstance(content, list):
        return "".join(p.get("text", "") for p in content if isinstance(p, dict))
    return str(content)


class ChatGateway:
    """Shared client; enforces ``max_parallel`` in-flight requests per endpoint."""

    def __init__(
        self,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self._client = client or httpx.Client()
        self._owns_client = client is None
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._lock = threading.Lock()
        self._slots: dict[tuple[str, str], threading.BoundedSemaphore] = {}

    def close(self) -> None:
        if self._owns_client:
            self._client.close()

    def __enter__(self) -> "ChatGateway":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _slot(self, endpoint: ModelEndpoint) -> threading.BoundedSemaphore:
        key = (endpoint.url, endpoint.model_name)
        with self._lock:
            if key not in self._slots:
                self._slots[key] = threading.BoundedSemaphore(endpoint.max_parallel)
            return self._slots[key]

    def complete_chat(self, endpoint: ModelEndpoint, request: ChatRequest) -> ModelResponse:
        body = json.dumps(request.to_payload(endpoint)).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if endpoint.auth_token:
            headers["Authorization"] = f"Bearer {endpoint.auth_token}"
        policy = endpoint.retry
        started = time.monotonic()
        last_error = "no attempt made"
        status = None
        for attempt in range(1, policy.max_attempts + 1):
            try:
                with self._slot(endpoint):
                    resp = self._client.post(endpoint.url, content=body, headers=headers, timeout=endpoint.timeout)
            except httpx.TimeoutException as exc:
                last_error = f"timeout: {exc}"
            except httpx.TransportError as exc:
                last_error = f"transport failure: {exc}"
            else:
                status = resp.status_code
                if status < 400:
                    try:
                        text = _message_text(resp.json())
                    except (ValueError, PayloadError) as exc:
                        raise RequestError(
                            f"unreadable response body: {exc}", endpoint=endpoint.describe(), attempts=attempt
                        ) from exc
                    try:
                        parsed = extract_json_payload(text)
                    except PayloadError:
                        parsed = None
                    return ModelResponse(
                        raw_text=text,
                        parsed_json=parsed,
                        attempt_count=attempt,
                        latency=time.monotonic() - started,
                        model_name=endpoint.model_name,
                    )
                if status not in RETRYABLE_STATUS:
                    raise RequestError(
                        f"HTTP {status}: {_excerpt(resp.text)}",
                        endpoint=endpoint.describe(),
                        attempts=attempt,
                        status=status,
                    )
                last_error = f"HTTP {status}"
            if attempt < policy.max_attempts:
                delay = policy.delay(attempt, self._rng)
                log.info("retrying %s after %s (attempt %d, sleeping %.2fs)", endpoint.describe(), last_error, attempt, delay)
                self._sleep(delay)
        raise TransportError(
            f"retries exhausted, last error: {last_error}",
            endpoint=endpoint.describe(),
            attempts=policy.max_attempts,
            status=status,
        )


_default_gateway: ChatGateway | None = None
_default_lock = threading.Lock()


def default_gateway() -> ChatGateway:
    global _default_gateway
    with _default_lock:
        if _default_gateway is None:
            _default_gateway = ChatGateway()
        return _default_gateway


def complete_chat(endpoint: ModelEndpoint, request: ChatRequest) -> ModelResponse:
    return default_gateway().complete_chat(endpoint, request)
