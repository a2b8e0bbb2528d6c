"""Chat-completion and embedding access over an OpenAI-compatible wire protocol.

Two interchangeable backends share one calling convention: an HTTP backend for
real endpoints, and a scripted backend that replays canned responses for
network-free runs and tests.  Every successful call lands exactly one record
in a usage ledger so optimizer-side spend can be reported separately from
target-side spend.
"""

from __future__ import annotations

import json
import math
import os
import random
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import requests

from .core import EmbeddingVector


class ClientError(Exception):
    """Base class for backend failures."""


class TransportError(ClientError):
    """Retries exhausted against transport faults or retryable HTTP statuses."""


class BadStatus(ClientError):
    def __init__(self, code: int, body: str):
        super().__init__(f"HTTP {code}: {body[:200]}")
        self.code = code
        self.body = body[:200]


class MalformedResponse(ClientError):
    """Response JSON is missing the expected content fields."""


class MissingApiKey(ClientError):
    def __init__(self, env_var: str):
        super().__init__(f"API key environment variable {env_var!r} is not set")
        self.env_var = env_var


class ScriptExhausted(ClientError):
    """No unconsumed script entry matches the request."""


class ZeroVector(ClientError):
    """The embedding backend returned an all-zero vector."""


class Role(Enum):
    OPTIMIZER = "optimizer"
    TARGET = "target"


_VALID_MESSAGE_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in _VALID_MESSAGE_ROLES:
            raise ValueError(f"unknown message role {self.role!r}")


def system(content: str) -> Message:
    return Message("system", content)


def user(content: str) -> Message:
    return Message("user", content)


def assistant(content: str) -> Message:
    return Message("assistant", content)


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    seed: int | None = None
    max_output_tokens: int | None = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("chat request needs at least one message")
        if self.messages[-1].role != "user":
            raise ValueError("last message must come from the user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens is not None and self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    def last_user_content(self) -> str:
        return self.messages[-1].content


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int


@dataclass(frozen=True)
class BackendConfig:
    base_url: str
    model: str
    api_key_env_var: str = ""
    price_in_per_1k: float = 0.0
    price_out_per_1k: float = 0.0
    timeout_s: float = 60.0
    max_retries: int = 2

    def __post_init__(self) -> None:
        if self.price_in_per_1k < 0 or self.price_out_per_1k < 0:
            raise ValueError("prices must be non-negative")
        if not (0 <= self.max_retries <= 5):
            raise ValueError("max_retries must be within [0, 5]")


def cost_usd(config: BackendConfig, prompt_tokens: int, completion_tokens: int) -> float:
    return (
        prompt_tokens / 1000.0 * config.price_in_per_1k
        + completion_tokens / 1000.0 * config.price_out_per_1k
    )


@dataclass(frozen=True)
class UsageRecord:
    role: Role
    model: str
    prompt_tokens: int
    completion_tokens: int
    cost_usd: float


class UsageLedger:
    """Append-only store of usage records with atomic appends.

    Subtotals are computed over a sorted copy so that concurrent append order
    never changes the reported float sums.
    """

    def __init__(self) -> None:
        self._records: list[UsageRecord] = []
        self._lock = threading.Lock()

    def append(self, record: UsageRecord) -> None:
        with self._lock:
            self._records.append(record)

    def records(self) -> tuple[UsageRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def subtotal(self, role: Role | None = None) -> float:
        costs = [r.cost_usd for r in self.records() if role is None or r.role is role]
        return math.fsum(sorted(costs))

    def total_cost(self) -> float:
        return self.subtotal(None)

    def count(self, role: Role | None = None) -> int:
        return sum(1 for r in self.records() if role is None or r.role is role)


class Backend(Protocol):
    """Raw transport: no retries visible to callers, no ledger writes."""

    config: BackendConfig

    def chat_raw(self, request: ChatRequest) -> ChatResponse: ...

    def embed_raw(self, text: str) -> tuple[EmbeddingVector, int]: ...


class HttpBackend:
    """OpenAI-compatible JSON-over-HTTPS backend.

    Retries transport faults and HTTP 429/5xx with exponential backoff
    (base 500 ms, doubling, jittered) up to ``config.max_retries`` extra
    attempts.  The API key is read from the configured environment variable at
    call time, never at construction.
    """

    def __init__(
        self,
        config: BackendConfig,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ) -> None:
        self.config = config
        self._session = session or requests.Session()
        self._sleep = sleep
        self._rng = rng or random.Random()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env_var:
            key = os.environ.get(self.config.api_key_env_var)
            if not key:
                raise MissingApiKey(self.config.api_key_env_var)
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, path: str, payload: dict) -> dict:
        url = self.config.base_url.rstrip("/") + path
        headers = self._headers()
        last_fault = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                delay = 0.5 * (2 ** (attempt - 1)) * (0.5 + self._rng.random())
                self._sleep(delay)
            try:
                resp = self._session.post(
                    url, json=payload, headers=headers, timeout=self.config.timeout_s
                )
            except requests.RequestException as exc:
                last_fault = f"transport fault: {exc}"
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_fault = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise BadStatus(resp.status_code, resp.text)
            try:
                return resp.json()
            except ValueError as exc:
                raise MalformedResponse(f"response body is not JSON: {exc}") from exc
        raise TransportError(
            f"{url}: retries exhausted after {self.config.max_retries + 1} attempts ({last_fault})"
        )

    def chat_raw(self, request: ChatRequest) -> ChatResponse:
        payload: dict = {
            "model": request.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        if request.max_output_tokens is not None:
            payload["max_tokens"] = request.max_output_tokens
        data = self._post("/chat/completions", payload)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"missing choices[0].message.content: {exc}") from exc
        if text is None:
            raise MalformedResponse("null message content")
        usage = data.get("usage") or {}
        return ChatResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )

    def embed_raw(self, text: str) -> tuple[EmbeddingVector, int]:
        data = self._post("/embeddings", {"model": self.config.model, "input": text})
        try:
            values = data["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"missing data[0].embedding: {exc}") from exc
        usage = data.get("usage") or {}
        return EmbeddingVector.of(values), int(usage.get("prompt_tokens", 0))


def mock_token_count(text: str) -> int:
    """Deterministic stand-in for backend token accounting: ceil(chars / 4)."""
    return (len(text) + 3) // 4


_SCRIPTED_CONFIG = BackendConfig(base_url="scripted:", model="scripted")


@dataclass
class ScriptEntry:
    """One canned exchange: consumed by the first request whose text contains ``match``."""

    match: str
    response: str | None = None
    embedding: tuple[float, ...] | None = None
    delay_s: float = 0.0
    consumed: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        if (self.response is None) == (self.embedding is None):
            raise ValueError("script entry needs exactly one of response/embedding")


class ScriptedBackend:
    """Deterministic scripted backend.

    Entries are matched in script order against the last user message (chat)
    or the input text (embed); each entry serves exactly one call.  Identical
    scripts replayed against identical call sequences produce identical
    responses.  Token counts follow ``mock_token_count``.
    """

    def __init__(self, entries: Iterable[ScriptEntry], config: BackendConfig | None = None) -> None:
        self.config = config or _SCRIPTED_CONFIG
        self._entries = list(entries)
        if not self._entries:
            raise ValueError("script must not be empty")
        self._lock = threading.Lock()
        self.chat_calls = 0
        self.embed_calls = 0

    @classmethod
    def from_file(cls, path: str | Path, config: BackendConfig | None = None) -> "ScriptedBackend":
        """Load a JSON script: a list of {match, response|embedding, delay_s?} objects."""
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = [
            ScriptEntry(
                match=item["match"],
                response=item.get("response"),
                embedding=tuple(item["embedding"]) if "embedding" in item else None,
                delay_s=float(item.get("delay_s", 0.0)),
            )
            for item in raw
        ]
        return cls(entries, config)

    def _take(self, text: str, want_embedding: bool) -> ScriptEntry:
        with self._lock:
            if want_embedding:
                self.embed_calls += 1
            else:
                self.chat_calls += 1
            for entry in self._entries:
                if entry.consumed:
                    continue
                if (entry.embedding is None) == want_embedding:
                    continue
                if entry.match in text:
                    entry.consumed = True
                    return entry
        kind = "embedding" if want_embedding else "chat"
        raise ScriptExhausted(f"no unconsumed {kind} entry matches: {text[:120]!r}")

    def chat_raw(self, request: ChatRequest) -> ChatResponse:
        entry = self._take(request.last_user_content(), want_embedding=False)
        if entry.delay_s > 0:
            time.sleep(entry.delay_s)
        assert entry.response is not None
        prompt_tokens = sum(mock_token_count(m.content) for m in request.messages)
        return ChatResponse(
            text=entry.response,
            prompt_tokens=prompt_tokens,
            completion_tokens=mock_token_count(entry.response),
        )

    def embed_raw(self, text: str) -> tuple[EmbeddingVector, int]:
        entry = self._take(text, want_embedding=True)
        if entry.delay_s > 0:
            time.sleep(entry.delay_s)
        assert entry.embedding is not None
        return EmbeddingVector.of(entry.embedding), mock_token_count(text)


def scripted_mock(
    script: Mapping[str, str | Sequence[float]] | Iterable[tuple[str, str | Sequence[float]]],
    config: BackendConfig | None = None,
) -> ScriptedBackend:
    """Build a scripted backend from (matcher, canned response) pairs.

    String responses answer chat calls; float sequences answer embed calls.
    """
    pairs = script.items() if isinstance(script, Mapping) else script
    entries = []
    for match, response in pairs:
        if isinstance(response, str):
            entries.append(ScriptEntry(match=match, response=response))
        else:
            entries.append(ScriptEntry(match=match, embedding=tuple(float(v) for v in response)))
    return ScriptedBackend(entries, config)


def chat(backend: Backend, request: ChatRequest, role: Role, ledger: UsageLedger) -> ChatResponse:
    """Issue one chat call and account for it.

    Appends exactly one usage record on success, none on failure, regardless
    of how many retries the backend performed internally.
    """
    response = backend.chat_raw(request)
    ledger.append(
        UsageRecord(
            role=role,
            model=backend.config.model,
            prompt_tokens=response.prompt_tokens,
            completion_tokens=response.completion_tokens,
            cost_usd=cost_usd(backend.config, response.prompt_tokens, response.completion_tokens),
        )
    )
    return response


def embed(backend: Backend, text: str, ledger: UsageLedger) -> EmbeddingVector:
    """Embed one text on the optimizer's account.

    Raises:
        ZeroVector: if the backend returns an all-zero vector.
        ValueError: if ``text`` is empty.
    """
    if not text:
        raise ValueError("cannot embed empty text")
    vector, prompt_tokens = backend.embed_raw(text)
    if all(v == 0.0 for v in vector.values):
        raise ZeroVector("embedding backend returned an all-zero vector")
    ledger.append(
        UsageRecord(
            role=Role.OPTIMIZER,
            model=backend.config.model,
            prompt_tokens=prompt_tokens,
            completion_tokens=0,
            cost_usd=cost_usd(backend.config, prompt_tokens, 0),
        )
    )
    return vector
