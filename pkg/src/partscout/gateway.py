"""Uniform client for chat-style vision-language backends.

Covers image attachments as base64 data URLs, exponential-backoff retries,
bounded thread fan-out, and deterministic record/replay fixtures so every
model-dependent stage can run offline.
"""

from __future__ import annotations

import base64
import hashlib
import json
import random
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Protocol, Sequence, Union


class GatewayError(Exception):
    """Base class for gateway failures."""


class ImageFormatError(GatewayError):
    """Attachment file has an unsupported extension."""


class BackendError(GatewayError):
    """A backend call failed. ``retryable`` drives the retry loop."""

    def __init__(self, message: str, *, retryable: bool) -> None:
        super().__init__(message)
        self.retryable = retryable


class RetriesExhaustedError(GatewayError):
    """All allowed attempts failed; carries the last cause."""

    def __init__(self, attempts: int, last_error: BackendError) -> None:
        super().__init__(f"gave up after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


class ReplayMissError(BackendError):
    """Request fingerprint not present in the replay fixture."""

    def __init__(self, fingerprint: str, nearest: Optional[str]) -> None:
        hint = f"; nearest recorded fingerprint is {nearest}" if nearest else ""
        super().__init__(f"no recorded response for {fingerprint}{hint}", retryable=False)
        self.fingerprint = fingerprint
        self.nearest = nearest


@dataclass(frozen=True)
class TextBlock:
    text: str


@dataclass(frozen=True)
class ImageBlock:
    data_url: str


Block = Union[TextBlock, ImageBlock]


def split_data_url(url: str) -> tuple[str, str]:
    """Split ``data:<media>;base64,<payload>`` into (media type, payload)."""
    if not url.startswith("data:") or ";base64," not in url:
        raise ValueError(f"not a base64 data URL: {url[:40]!r}")
    head, payload = url.split(";base64,", 1)
    return head[len("data:") :], payload


def decode_data_url(url: str) -> bytes:
    return base64.b64decode(split_data_url(url)[1])


@dataclass(frozen=True)
class ChatRequest:
    """One chat call: ordered user blocks plus model settings."""

    model_name: str
    user_blocks: tuple[Block, ...]
    system_text: Optional[str] = None
    temperature: float = 0.0
    max_output: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.user_blocks:
            raise ValueError("ChatRequest needs at least one user block")
        for block in self.user_blocks:
            if isinstance(block, ImageBlock):
                split_data_url(block.data_url)

    @property
    def prompt_chars(self) -> int:
        """Total characters of text content (image payloads excluded)."""
        total = len(self.system_text or "")
        for block in self.user_blocks:
            if isinstance(block, TextBlock):
                total += len(block.text)
        return total

    def fingerprint(self) -> str:
        """Stable content hash: model name, text blocks, attachment digests."""
        hasher = hashlib.sha256()
        hasher.update(self.model_name.encode("utf-8"))
        for block in self.user_blocks:
            hasher.update(b"\x1f")
            if isinstance(block, TextBlock):
                hasher.update(b"text:")
                hasher.update(block.text.encode("utf-8"))
            else:
                payload = split_data_url(block.data_url)[1].encode("ascii")
                hasher.update(b"image:")
                hasher.update(hashlib.sha256(payload).hexdigest().encode("ascii"))
        return hasher.hexdigest()


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3
    base_delay: float = 1.0
    multiplier: float = 2.0
    jitter: float = 0.0

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.base_delay <= 0:
            raise ValueError("base_delay must be > 0")
        if self.multiplier < 1.0:
            raise ValueError("multiplier must be >= 1")
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter must be in [0, 1)")

    def delay_for(self, attempt: int, rng: Optional[random.Random] = None) -> float:
        """Wait before retrying after failed attempt number ``attempt`` (1-based)."""
        delay = self.base_delay * self.multiplier ** (attempt - 1)
        if self.jitter and rng is not None:
            delay *= 1.0 + rng.uniform(-self.jitter, self.jitter)
        return delay


@dataclass(frozen=True)
class ModelResponse:
    text: str
    usage: Optional[dict]
    latency: float
    attempt_count: int


@dataclass(frozen=True)
class BackendResult:
    text: str
    usage: Optional[dict] = None


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> Union[str, BackendResult]:
        """Return the model's text (or a BackendResult); raise BackendError on failure."""


class SystemClock:
    def monotonic(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class VirtualClock:
    """Injectable clock for tests: sleeping advances time instantly and
    every requested wait is recorded."""

    def __init__(self) -> None:
        self.now = 0.0
        self.sleeps: list[float] = []
        self._lock = threading.Lock()

    def monotonic(self) -> float:
        with self._lock:
            return self.now

    def sleep(self, seconds: float) -> None:
        with self._lock:
            self.sleeps.append(seconds)
            self.now += seconds


def encode_image_attachment(path: Union[str, Path]) -> str:
    """Encode an image file as a ``data:image/...;base64,...`` URL.

    The extension picks the media type; decoding the payload reproduces the
    file bytes exactly.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    media = {".png": "png", ".jpg": "jpeg", ".jpeg": "jpeg"}.get(suffix)
    if media is None:
        raise ImageFormatError(f"unsupported image extension {suffix!r} for {path}")
    payload = base64.b64encode(path.read_bytes()).decode("ascii")
    return f"data:image/{media};base64,{payload}"


def send_chat(
    request: ChatRequest,
    backend: Backend,
    policy: RetryPolicy = RetryPolicy(),
    clock: Optional[Any] = None,
    rng: Optional[random.Random] = None,
) -> ModelResponse:
    """Call ``backend`` with retries.

    Retryable failures wait ``base_delay * multiplier**(attempt-1)`` before
    the next try; non-retryable failures propagate immediately. After
    ``max_retries + 1`` failed attempts a :class:`RetriesExhaustedError`
    carrying the last cause is raised.
    """
    clock = clock or SystemClock()
    started = clock.monotonic()
    attempt = 0
    while True:
        attempt += 1
        try:
            reply = backend.complete(request)
        except BackendError as err:
            if not err.retryable:
                raise
            if attempt >= policy.max_retries + 1:
                raise RetriesExhaustedError(attempt, err) from err
            clock.sleep(policy.delay_for(attempt, rng))
            continue
        if isinstance(reply, BackendResult):
            text, usage = reply.text, reply.usage
        else:
            text, usage = reply, None
        return ModelResponse(text, usage, clock.monotonic() - started, attempt)


@dataclass
class ItemOutcome:
    """Per-item result of :func:`parallel_map`: a value or a captured error."""

    value: Any = None
    error: Optional[Exception] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def parallel_map(
    items: Sequence[Any],
    worker_limit: int,
    task: Callable[[Any], Any],
) -> list[ItemOutcome]:
    """Run ``task`` over ``items`` with at most ``worker_limit`` threads.

    Results come back in input order; one item's exception is captured in
    its own slot without aborting the others.
    """
    if worker_limit < 1:
        raise ValueError("worker_limit must be >= 1")

    def guarded(item: Any) -> ItemOutcome:
        try:
            return ItemOutcome(value=task(item))
        except Exception as err:  # per-item isolation is the contract
            return ItemOutcome(error=err)

    if not items:
        return []
    with ThreadPoolExecutor(max_workers=worker_limit) as pool:
        return list(pool.map(guarded, items))


@dataclass
class ReplayFixture:
    """Recorded request fingerprints and their canned response texts."""

    records: dict[str, str] = field(default_factory=dict)
    _lock: threading.Lock = field(
        default_factory=threading.Lock, repr=False, compare=False
    )

    def add(self, fingerprint: str, response_text: str) -> None:
        with self._lock:
            existing = self.records.get(fingerprint)
            if existing is not None and existing != response_text:
                raise ValueError(f"fingerprint collision for {fingerprint}")
            self.records[fingerprint] = response_text

    def save(self, path: Union[str, Path]) -> None:
        lines = [
            json.dumps({"fingerprint": fp, "response_text": text}, sort_keys=True)
            for fp, text in sorted(self.records.items())
        ]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ReplayFixture":
        fixture = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            fixture.add(record["fingerprint"], record["response_text"])
        return fixture


def _nearest_fingerprint(fingerprint: str, known: Iterable[str]) -> Optional[str]:
    def prefix_len(other: str) -> int:
        count = 0
        for a, b in zip(fingerprint, other):
            if a != b:
                break
            count += 1
        return count

    candidates = sorted(known)
    if not candidates:
        return None
    return max(candidates, key=prefix_len)


class ReplayBackend:
    """Backend answering by fingerprint lookup into a fixture."""

    def __init__(self, fixture: ReplayFixture) -> None:
        self._fixture = fixture
        self._lock = threading.Lock()
        self.hits = 0

    def complete(self, request: ChatRequest) -> str:
        fingerprint = request.fingerprint()
        text = self._fixture.records.get(fingerprint)
        if text is None:
            raise ReplayMissError(
                fingerprint, _nearest_fingerprint(fingerprint, self._fixture.records)
            )
        with self._lock:
            self.hits += 1
        return text


def replay_backend(fixture: ReplayFixture) -> ReplayBackend:
    return ReplayBackend(fixture)


class RecordingBackend:
    """Pass-through backend that captures every exchange into a fixture."""

    def __init__(self, inner: Backend, fixture: ReplayFixture) -> None:
        self._inner = inner
        self.fixture = fixture

    def complete(self, request: ChatRequest) -> Union[str, BackendResult]:
        reply = self._inner.complete(request)
        text = reply.text if isinstance(reply, BackendResult) else reply
        self.fixture.add(request.fingerprint(), text)
        return reply


class ScriptedBackend:
    """Backend replaying a fixed script of texts and/or exceptions, in order."""

    def __init__(self, script: Sequence[Union[str, Exception]]) -> None:
        self._script = list(script)
        self._lock = threading.Lock()
        self.calls = 0

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            if not self._script:
                raise BackendError("scripted backend exhausted", retryable=False)
            step = self._script.pop(0)
            self.calls += 1
        if isinstance(step, Exception):
            raise step
        return step


class FunctionBackend:
    """Backend delegating to a plain callable(request) -> text."""

    def __init__(self, fn: Callable[[ChatRequest], Union[str, BackendResult]]) -> None:
        self._fn = fn

    def complete(self, request: ChatRequest) -> Union[str, BackendResult]:
        return self._fn(request)


def _post_json(url: str, headers: dict, payload: dict, timeout: float) -> dict:
    body = json.dumps(payload).encode("utf-8")
    request = urllib.request.Request(url, data=body, method="POST")
    request.add_header("Content-Type", "application/json")
    for key, value in headers.items():
        request.add_header(key, value)
    try:
        with urllib.request.urlopen(request, timeout=timeout) as response:
            return json.loads(response.read().decode("utf-8"))
    except urllib.error.HTTPError as err:
        detail = ""
        try:
            detail = err.read().decode("utf-8", "replace")[:500]
        except Exception:
            pass
        retryable = err.code == 429 or err.code >= 500
        raise BackendError(f"HTTP {err.code}: {detail}", retryable=retryable) from err
    except (urllib.error.URLError, TimeoutError, OSError) as err:
        raise BackendError(f"transport failure: {err}", retryable=True) from err


class OpenAIChatBackend:
    """OpenAI-style chat-completions wire dialect."""

    def __init__(
        self,
        base_url: str,
        api_key: str,
        timeout: float = 120.0,
        post: Callable[..., dict] = _post_json,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self._post = post

    def build_payload(self, request: ChatRequest) -> dict:
        content: list[dict] = []
        for block in request.user_blocks:
            if isinstance(block, TextBlock):
                content.append({"type": "text", "text": block.text})
            else:
                content.append({"type": "image_url", "image_url": {"url": block.data_url}})
        messages: list[dict] = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": content})
        payload: dict = {
            "model": request.model_name,
            "messages": messages,
            "temperature": request.temperature,
        }
        if request.max_output is not None:
            payload["max_tokens"] = request.max_output
        return payload

    def complete(self, request: ChatRequest) -> BackendResult:
        data = self._post(
            f"{self.base_url}/chat/completions",
            {"Authorization": f"Bearer {self.api_key}"},
            self.build_payload(request),
            self.timeout,
        )
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as err:
            raise BackendError(f"malformed completion payload: {err}", retryable=False) from err
        return BackendResult(text, data.get("usage"))


class GeminiBackend:
    """Gemini-style generateContent wire dialect."""

    def __init__(
        self,
        base_url: str,
        api_key: str,
        timeout: float = 120.0,
        post: Callable[..., dict] = _post_json,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self._post = post

    def build_payload(self, request: ChatRequest) -> dict:
        parts: list[dict] = []
        for block in request.user_blocks:
            if isinstance(block, TextBlock):
                parts.append({"text": block.text})
            else:
                media, payload = split_data_url(block.data_url)
                parts.append({"inline_data": {"mime_type": media, "data": payload}})
        body: dict = {
            "contents": [{"role": "user", "parts": parts}],
            "generationConfig": {"temperature": request.temperature},
        }
        if request.max_output is not None:
            body["generationConfig"]["maxOutputTokens"] = request.max_output
        if request.system_text:
            body["systemInstruction"] = {"parts": [{"text": request.system_text}]}
        return body

    def complete(self, request: ChatRequest) -> BackendResult:
        data = self._post(
            f"{self.base_url}/models/{request.model_name}:generateContent",
            {"x-goog-api-key": self.api_key},
            self.build_payload(request),
            self.timeout,
        )
        try:
            parts = data["candidates"][0]["content"]["parts"]
            text = "".join(part.get("text", "") for part in parts)
        except (KeyError, IndexError, TypeError) as err:
            raise BackendError(f"malformed generateContent payload: {err}", retryable=False) from err
        return BackendResult(text, data.get("usageMetadata"))


def backend_from_env(env: Optional[dict] = None, dialect: Optional[str] = None) -> Backend:
    """Build a live backend from MODEL_API_KEY / MODEL_BASE_URL / MODEL_DIALECT."""
    import os

    env = env if env is not None else dict(os.environ)
    api_key = env.get("MODEL_API_KEY", "")
    if not api_key:
        raise GatewayError("MODEL_API_KEY is not set; use --replay for offline runs")
    dialect = (dialect or env.get("MODEL_DIALECT") or "openai").lower()
    if dialect == "openai":
        base = env.get("MODEL_BASE_URL", "https://api.openai.com/v1")
        return OpenAIChatBackend(base, api_key)
    if dialect == "gemini":
        base = env.get("MODEL_BASE_URL", "https://generativelanguage.googleapis.com/v1beta")
        return GeminiBackend(base, api_key)
    raise GatewayError(f"unknown dialect {dialect!r} (expected 'openai' or 'gemini')")
