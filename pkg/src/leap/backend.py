"""Chat-completion and text-embedding providers.

Two chat providers share one interface: an HTTP client speaking the standard
chat-completions wire format, and a deterministic scripted provider that
answers from a fixture file so every agent behavior can be tested offline.
Embeddings likewise come either from the HTTP endpoint or from a seeded
feature-hashing embedder with reproducible geometry.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Protocol

import requests

from .core import canonical_json, read_record_lines
from .errors import (
    ProviderError,
    RetryExhaustedError,
    SchemaError,
    UnmatchedFixtureError,
)

__all__ = [
    "ChatMessage",
    "ChatRequest",
    "Embedding",
    "ChatProvider",
    "Embedder",
    "request_digest",
    "ScriptedProvider",
    "ScriptEntry",
    "load_script",
    "HashingEmbedder",
    "HttpBackend",
    "euclidean",
    "cosine",
]


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "user" | "assistant"
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("user", "assistant"):
            raise SchemaError(f"message role must be user or assistant, got {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion request; immutable so providers cannot mutate it."""

    system_prompt: str
    messages: tuple[ChatMessage, ...]
    temperature: float
    top_p: float = 1.0
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise SchemaError("chat request needs at least one message")
        if not 0.0 <= self.temperature <= 2.0:
            raise SchemaError(f"temperature {self.temperature} outside [0, 2]")
        if not 0.0 < self.top_p <= 1.0:
            raise SchemaError(f"top_p {self.top_p} outside (0, 1]")
        if self.max_tokens <= 0:
            raise SchemaError("max_tokens must be positive")

    def text(self) -> str:
        """All textual content of the request, used for substring routing."""
        return "\n".join([self.system_prompt, *(m.content for m in self.messages)])


@dataclass(frozen=True)
class Embedding:
    """A fixed-length vector of finite reals."""

    vector: tuple[float, ...]
    dim: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "vector", tuple(float(v) for v in self.vector))
        if len(self.vector) != self.dim:
            raise SchemaError(f"embedding has {len(self.vector)} entries, declared dim {self.dim}")
        if not all(math.isfinite(v) for v in self.vector):
            raise SchemaError("embedding entries must be finite")

    @classmethod
    def of(cls, values: Iterable[float]) -> "Embedding":
        vec = tuple(float(v) for v in values)
        return cls(vector=vec, dim=len(vec))


def euclidean(a: Embedding, b: Embedding) -> float:
    """Euclidean distance between two embeddings of equal dimension."""
    if a.dim != b.dim:
        raise SchemaError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a.vector, b.vector)))


def cosine(a: Embedding, b: Embedding) -> float:
    """Cosine similarity; zero vectors compare as 0.0."""
    if a.dim != b.dim:
        raise SchemaError(f"dimension mismatch: {a.dim} vs {b.dim}")
    dot = sum(x * y for x, y in zip(a.vector, b.vector))
    na = math.sqrt(sum(x * x for x in a.vector))
    nb = math.sqrt(sum(y * y for y in b.vector))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


class ChatProvider(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class Embedder(Protocol):
    def embed(self, text: str) -> Embedding: ...


def request_digest(request: ChatRequest) -> str:
    """SHA-256 key for a request: system prompt, messages, and temperature."""
    payload = canonical_json(
        [
            "chat",
            request.system_prompt,
            [[m.role, m.content] for m in request.messages],
            request.temperature,
        ]
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class ScriptEntry:
    """One scripted reply.

    Matched by exact request digest when ``key`` is set, by substring routing
    when ``claim_key`` is set (the entry answers the next request whose text
    contains the substring), or consumed in file order when neither is set.
    """

    reply: str
    key: str | None = None
    claim_key: str | None = None

    @classmethod
    def from_dict(cls, obj: Any, *, line: int | None = None) -> "ScriptEntry":
        if not isinstance(obj, dict):
            raise SchemaError("script entry must be an object", line=line)
        unknown = set(obj) - {"reply", "key", "claim_key"}
        if unknown:
            raise SchemaError(f"unknown script fields: {sorted(unknown)}", line=line)
        if "reply" not in obj or not isinstance(obj["reply"], str):
            raise SchemaError("script entry needs a string reply", line=line, field="reply")
        return cls(reply=obj["reply"], key=obj.get("key"), claim_key=obj.get("claim_key"))


def load_script(path: str | Path) -> list[ScriptEntry]:
    return read_record_lines(
        path, lambda text, i: ScriptEntry.from_dict(json.loads(text), line=i)
    )


class ScriptedProvider:
    """Deterministic chat provider answering from a fixed script.

    Lookup order per request: exact digest match, then claim-keyed entries,
    then the next plain ordinal entry. Anything unmatched is an error, never
    a fallback. Every call is appended to ``calls`` for test assertions.

    Claim-keyed routing picks the unconsumed entry whose substring occurs
    EARLIEST in the request text (file order breaks ties). Prompts render the
    claim under processing first and retrieved exemplars below it, so the
    earliest match is the right claim even when memory contents quote other
    claims verbatim.
    """

    def __init__(self, entries: Iterable[ScriptEntry]):
        self._entries = list(entries)
        self._consumed = [False] * len(self._entries)
        self._lock = threading.Lock()
        self.calls: list[dict[str, str]] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedProvider":
        return cls(load_script(path))

    def complete(self, request: ChatRequest) -> str:
        digest = request_digest(request)
        text = request.text()
        with self._lock:
            index = self._find(digest, text)
            if index is None:
                raise UnmatchedFixtureError(f"no script entry matches request digest {digest}")
            entry = self._entries[index]
            if entry.key is None:
                self._consumed[index] = True
            mode = "key" if entry.key else ("claim_key" if entry.claim_key else "ordinal")
            self.calls.append({"digest": digest, "mode": mode, "reply": entry.reply})
            return entry.reply

    def _find(self, digest: str, text: str) -> int | None:
        for i, entry in enumerate(self._entries):
            if entry.key == digest:
                return i
        best: tuple[int, int] | None = None
        for i, entry in enumerate(self._entries):
            if self._consumed[i] or entry.claim_key is None:
                continue
            position = text.find(entry.claim_key)
            if position >= 0 and (best is None or position < best[0]):
                best = (position, i)
        if best is not None:
            return best[1]
        for i, entry in enumerate(self._entries):
            if self._consumed[i] or entry.key is not None or entry.claim_key is not None:
                continue
            return i
        return None

    def remaining(self) -> int:
        with self._lock:
            return sum(
                1
                for i, entry in enumerate(self._entries)
                if entry.key is None and not self._consumed[i]
            )


class HashingEmbedder:
    """Seeded character-trigram feature hashing into a fixed dimension.

    Each trigram is hashed with a keyed blake2b; the digest picks a bucket
    and a sign. Vectors are L2-normalized, so shared trigrams pull texts
    together under Euclidean distance. Fully deterministic for a given
    (dim, seed), across processes and platforms.
    """

    def __init__(self, dim: int, seed: int = 0):
        if dim <= 0:
            raise SchemaError("embedder dim must be positive")
        self.dim = dim
        self._key = seed.to_bytes(8, "little", signed=True)

    def embed(self, text: str) -> Embedding:
        if not text:
            raise SchemaError("cannot embed empty text")
        counts = [0.0] * self.dim
        grams = [text[i : i + 3] for i in range(len(text) - 2)] or [text]
        for gram in grams:
            digest = hashlib.blake2b(gram.encode("utf-8"), key=self._key, digest_size=8).digest()
            value = int.from_bytes(digest, "big")
            bucket = value % self.dim
            sign = 1.0 if value & (1 << 63) else -1.0
            counts[bucket] += sign
        norm = math.sqrt(sum(c * c for c in counts))
        if norm == 0.0:
            counts[0] = 1.0
            norm = 1.0
        return Embedding.of(c / norm for c in counts)


_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


@dataclass
class HttpBackend:
    """HTTP client for chat completions and embeddings.

    Speaks the industry-standard wire shape: POST {base_url}/chat/completions
    and POST {base_url}/embeddings, bearer-token auth. Transient failures
    (connection errors, 5xx, 429) are retried with exponential backoff.
    """

    base_url: str
    model: str
    embed_model: str = ""
    embed_dim: int = 0
    api_key: str | None = None
    retries: int = 3
    backoff_s: float = 0.25
    timeout_s: float = 60.0
    session: Any = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.base_url = self.base_url.rstrip("/")
        if self.session is None:
            self.session = requests.Session()

    def complete(self, request: ChatRequest) -> str:
        body = self.chat_body(request)
        payload = self._post("/chat/completions", body)
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat response: {exc!r}") from exc

    def embed(self, text: str) -> Embedding:
        if not text:
            raise SchemaError("cannot embed empty text")
        body = canonical_json({"model": self.embed_model, "input": text}).encode("utf-8")
        payload = self._post("/embeddings", body)
        try:
            vector = payload["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed embedding response: {exc!r}") from exc
        embedding = Embedding.of(vector)
        if self.embed_dim and embedding.dim != self.embed_dim:
            raise ProviderError(
                f"provider returned dim {embedding.dim}, configured dim {self.embed_dim}"
            )
        return embedding

    def chat_body(self, request: ChatRequest) -> bytes:
        """Serialized request body; key order and separators are fixed."""
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.extend({"role": m.role, "content": m.content} for m in request.messages)
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        }
        return canonical_json(body).encode("utf-8")

    def _post(self, route: str, body: bytes) -> Any:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = self.base_url + route
        last_reason = "no attempt made"
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                response = self.session.post(url, data=body, headers=headers, timeout=self.timeout_s)
            except requests.RequestException as exc:
                last_reason = f"transport error: {exc}"
                continue
            if response.status_code in _RETRYABLE_STATUSES:
                last_reason = f"status {response.status_code}"
                continue
            if response.status_code != 200:
                raise ProviderError(
                    f"provider returned status {response.status_code}: {response.text[:200]}",
                    status=response.status_code,
                    body=response.text[:200],
                )
            try:
                return response.json()
            except ValueError as exc:
                raise ProviderError(f"provider returned invalid JSON: {exc}") from exc
        raise RetryExhaustedError(
            f"gave up on {url} after {self.retries + 1} attempts ({last_reason})"
        )
