"""Access to chat-completion and embedding models.

Two interchangeable gateways expose the same surface:

* :class:`OpenAIGateway` speaks the OpenAI-compatible JSON-over-HTTP wire
  protocol (chat completions + embeddings) with bounded retries.
* :class:`MockGateway` replays a scripted response table and produces
  deterministic hash-based embeddings, so the whole pipeline runs
  bit-reproducibly offline.

Both count calls into a shared :class:`CallLedger`; one "LLM call" is one
chat completion, and embedding requests are tracked separately.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import requests

logger = logging.getLogger(__name__)

#: Hard cap on answer-generation output length (short-form answers).
ANSWER_MAX_TOKENS = 50

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


class GatewayError(RuntimeError):
    """Transport failure, exhausted retries, or a non-retryable status."""

    def __init__(self, message: str, status: int | None = None) -> None:
        super().__init__(message)
        self.status = status


@dataclass
class ChatRequest:
    user: str
    system: str = ""
    temperature: float = 0.0
    max_tokens: int = ANSWER_MAX_TOKENS

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")

    def messages(self) -> list[dict]:
        msgs = []
        if self.system:
            msgs.append({"role": "system", "content": self.system})
        msgs.append({"role": "user", "content": self.user})
        return msgs

    def rendered(self) -> str:
        """Full prompt text as seen by matcher rules."""
        return f"{self.system}\n{self.user}" if self.system else self.user


class CallLedger:
    """Thread-safe counters for chat/embedding traffic and wall times."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.chat_calls = 0
        self.embed_calls = 0
        self.wall_times: list[float] = []

    def record_chat(self, seconds: float) -> None:
        with self._lock:
            self.chat_calls += 1
            self.wall_times.append(seconds)

    def record_embed(self, n_requests: int, seconds: float) -> None:
        with self._lock:
            self.embed_calls += n_requests
            self.wall_times.append(seconds)

    def snapshot(self) -> tuple[int, int]:
        with self._lock:
            return self.chat_calls, self.embed_calls


def _check_texts(texts: Sequence[str]) -> None:
    for i, text in enumerate(texts):
        if not text:
            raise ValueError(f"embedding input at index {i} is empty")


@dataclass
class GatewayConfig:
    """Connection settings for a live OpenAI-compatible endpoint."""

    endpoint: str
    api_key: str = ""
    chat_model: str = "gpt-4o-mini"
    embed_model: str = "text-embedding-3-small"
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5
    embed_batch_size: int = 128


class OpenAIGateway:
    """JSON-over-HTTP client for chat completions and embeddings.

    Retries up to ``max_retries`` attempts with exponential backoff on
    transport errors and HTTP 429/5xx; any other non-2xx status fails fast
    with the status attached. Only successful completions are counted.
    """

    def __init__(self, config: GatewayConfig, ledger: CallLedger | None = None) -> None:
        self.config = config
        self.ledger = ledger or CallLedger()

    def _post(self, path: str, payload: dict) -> dict:
        url = self.config.endpoint.rstrip("/") + path
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries):
            try:
                resp = requests.post(
                    url, json=payload, headers=headers, timeout=self.config.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
            else:
                if resp.status_code // 100 == 2:
                    return resp.json()
                if resp.status_code not in RETRYABLE_STATUSES:
                    raise GatewayError(
                        f"{url} returned status {resp.status_code}: {resp.text[:200]}",
                        status=resp.status_code,
                    )
                last_error = GatewayError(
                    f"{url} returned status {resp.status_code}",
                    status=resp.status_code,
                )
            if attempt + 1 < self.config.max_retries:
                time.sleep(self.config.backoff_base * (2**attempt))
        raise GatewayError(
            f"{url} failed after {self.config.max_retries} attempts: {last_error}",
            status=getattr(last_error, "status", None),
        )

    def chat_complete(self, req: ChatRequest) -> str:
        payload = {
            "model": self.config.chat_model,
            "messages": req.messages(),
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        start = time.perf_counter()
        data = self._post("/chat/completions", payload)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat completion response: {exc}") from exc
        if not isinstance(content, str):
            raise GatewayError("chat completion content is not a string")
        self.ledger.record_chat(time.perf_counter() - start)
        return content

    def embed_batch(self, texts: Sequence[str]) -> list[list[float]]:
        _check_texts(texts)
        vectors: list[list[float]] = []
        size = self.config.embed_batch_size
        for lo in range(0, len(texts), size):
            batch = list(texts[lo : lo + size])
            start = time.perf_counter()
            data = self._post(
                "/embeddings", {"model": self.config.embed_model, "input": batch}
            )
            try:
                rows = sorted(data["data"], key=lambda r: r["index"])
                got = [[float(x) for x in row["embedding"]] for row in rows]
            except (KeyError, TypeError) as exc:
                raise GatewayError(f"malformed embeddings response: {exc}") from exc
            if len(got) != len(batch):
                raise GatewayError(
                    f"embeddings response has {len(got)} vectors for {len(batch)} inputs"
                )
            self.ledger.record_embed(1, time.perf_counter() - start)
            vectors.extend(got)
        return vectors


_TOKEN_RE = re.compile(r"[0-9a-z]+")


def hash_embedding(text: str, dim: int) -> list[float]:
    """Deterministic bag-of-words embedding via signed feature hashing.

    Each lowercase token is hashed with SHA-256; the first four digest bytes
    (big-endian) pick a bucket and the fifth byte's parity picks the sign.
    The count vector is L2-normalized, so texts sharing vocabulary score
    higher under cosine. Texts with no tokens fall back to a digest-derived
    strictly-positive vector; the result is never the zero vector.
    """
    if dim < 1:
        raise ValueError("embedding dimension must be >= 1")
    vec = [0.0] * dim
    for token in _TOKEN_RE.findall(text.casefold()):
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:4], "big") % dim
        vec[bucket] += 1.0 if digest[4] % 2 == 0 else -1.0
    norm = math.sqrt(sum(v * v for v in vec))
    if norm < 1e-9:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        vec = [digest[i % len(digest)] / 255.0 + 0.0625 for i in range(dim)]
        norm = math.sqrt(sum(v * v for v in vec))
    return [v / norm for v in vec]


@dataclass(frozen=True)
class MockRule:
    """One scripted response: serve ``response`` when the prompt matches."""

    response: str
    contains: str | None = None
    regex: str | None = None
    _compiled: re.Pattern | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if (self.contains is None) == (self.regex is None):
            raise ValueError("mock rule needs exactly one of 'contains' or 'regex'")
        if self.regex is not None:
            object.__setattr__(self, "_compiled", re.compile(self.regex))

    def matches(self, prompt: str) -> bool:
        if self.contains is not None:
            return self.contains in prompt
        assert self._compiled is not None
        return self._compiled.search(prompt) is not None


class MockGateway:
    """Scripted stand-in for the live gateway.

    Chat responses come from the first matching rule (ordered, substring or
    regular-expression match on the rendered prompt); embeddings come from
    :func:`hash_embedding`. Fully deterministic: two runs over the same
    corpus and script produce identical indexes and answers.
    """

    def __init__(
        self,
        rules: Sequence[MockRule] = (),
        embedding_dim: int = 64,
        default_response: str | None = None,
        ledger: CallLedger | None = None,
    ) -> None:
        if embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        self.rules = list(rules)
        self.embedding_dim = embedding_dim
        self.default_response = default_response
        self.ledger = ledger or CallLedger()

    @classmethod
    def from_script(cls, script: dict | str | Path, ledger: CallLedger | None = None) -> "MockGateway":
        """Build from a script: a dict or a path to a JSON file.

        Script format::

            {
              "embedding_dim": 64,
              "rules": [
                {"contains": "some substring", "response": "..."},
                {"regex": "(?s)a.*pattern", "response": "..."}
              ],
              "default_response": "optional fallback"
            }
        """
        if not isinstance(script, dict):
            with open(script, encoding="utf-8") as fh:
                script = json.load(fh)
        rules = [
            MockRule(
                response=str(r["response"]),
                contains=r.get("contains"),
                regex=r.get("regex"),
            )
            for r in script.get("rules", [])
        ]
        return cls(
            rules=rules,
            embedding_dim=int(script.get("embedding_dim", 64)),
            default_response=script.get("default_response"),
            ledger=ledger,
        )

    def chat_complete(self, req: ChatRequest) -> str:
        prompt = req.rendered()
        start = time.perf_counter()
        for rule in self.rules:
            if rule.matches(prompt):
                self.ledger.record_chat(time.perf_counter() - start)
                return rule.response
        if self.default_response is not None:
            self.ledger.record_chat(time.perf_counter() - start)
            return self.default_response
        raise GatewayError(
            "no mock rule matched the prompt (first 120 chars): "
            + prompt[:120].replace("\n", "\\n")
        )

    def embed_batch(self, texts: Sequence[str]) -> list[list[float]]:
        _check_texts(texts)
        if not texts:
            return []
        start = time.perf_counter()
        vectors = [hash_embedding(t, self.embedding_dim) for t in texts]
        self.ledger.record_embed(1, time.perf_counter() - start)
        return vectors
