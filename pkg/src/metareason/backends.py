"""Chat-completion and embedding backends behind one small interface.

Two implementations: an HTTP client speaking the OpenAI-compatible wire
protocol (``/chat/completions`` and ``/embeddings``), and a scripted mock
whose completions and embeddings are fully deterministic, so whole
orchestration runs replay byte-identically under a fixed seed.

Backends are read-only handles; concurrent requests from different tasks
are fine. Transient transport and rate-limit failures are retried with
exponential backoff; content-level problems (malformed output, empty
completions) are never retried here - that policy belongs to callers.
"""
from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import httpx
import numpy as np


class BackendError(Exception):
    """Base class for backend failures."""


class TransportError(BackendError):
    """Network-level failure (connect, timeout, 5xx)."""


class AuthError(BackendError):
    """Credential rejected or missing; never retried."""


class RateLimitError(BackendError):
    """Provider throttled the request; retryable."""


class EmptyCompletionError(BackendError):
    """The model returned no usable text."""


class BackendConfigError(BackendError):
    """Backend configuration is inconsistent (e.g. embedding dimension)."""


@dataclass(frozen=True)
class GenerationRequest:
    system_prompt: str
    user_prompt: str
    max_tokens: int
    temperature: float = 0.7
    top_p: float = 1.0
    seed_hint: int | None = None


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency_ms: float
    model_id: str
    retries: int = 0


@dataclass(frozen=True)
class EmbeddingResponse:
    vector: tuple[float, ...]
    model_id: str


def _with_retries(attempt: Callable[[], GenerationResponse], retries: int, backoff: float,
                  sleep: Callable[[float], None] | None) -> GenerationResponse:
    """Run ``attempt`` retrying transport/rate-limit errors with backoff."""
    tries = 0
    while True:
        try:
            resp = attempt()
        except (TransportError, RateLimitError):
            if tries >= retries:
                raise
            if sleep is not None:
                sleep(backoff * (2 ** tries))
            tries += 1
            continue
        if tries:
            resp = GenerationResponse(
                text=resp.text,
                prompt_tokens=resp.prompt_tokens,
                completion_tokens=resp.completion_tokens,
                latency_ms=resp.latency_ms,
                model_id=resp.model_id,
                retries=tries,
            )
        return resp


class OpenAiCompatBackend:
    """Client for any provider exposing the OpenAI-compatible endpoints."""

    def __init__(
        self,
        base_url: str,
        chat_model: str,
        embed_model: str = "text-embedding-3-small",
        api_key_env: str = "OPENAI_API_KEY",
        expected_embed_dim: int | None = None,
        retries: int = 3,
        backoff_s: float = 0.5,
        timeout_s: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.chat_model = chat_model
        self.embed_model = embed_model
        self.api_key_env = api_key_env
        self.expected_embed_dim = expected_embed_dim
        self.retries = retries
        self.backoff_s = backoff_s
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise AuthError(f"credential env var {self.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}"}

    def _post(self, path: str, payload: dict) -> dict:
        try:
            response = self._client.post(
                f"{self.base_url}{path}", json=payload, headers=self._headers()
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"request to {path} failed: {exc}") from exc
        if response.status_code in (401, 403):
            raise AuthError(f"auth rejected ({response.status_code}) on {path}")
        if response.status_code == 429:
            raise RateLimitError(f"rate limited on {path}")
        if response.status_code >= 500:
            raise TransportError(f"server error {response.status_code} on {path}")
        if response.status_code != 200:
            raise BackendError(f"unexpected status {response.status_code}: {response.text[:200]}")
        return response.json()

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        payload = {
            "model": self.chat_model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "top_p": request.top_p,
        }
        if request.seed_hint is not None:
            payload["seed"] = request.seed_hint

        def attempt() -> GenerationResponse:
            start = time.monotonic()
            doc = self._post("/chat/completions", payload)
            elapsed_ms = (time.monotonic() - start) * 1000.0
            try:
                text = doc["choices"][0]["message"]["content"] or ""
                usage = doc.get("usage") or {}
            except (KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed completion payload: {exc}") from exc
            return GenerationResponse(
                text=text,
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
                latency_ms=elapsed_ms,
                model_id=str(doc.get("model", self.chat_model)),
            )

        return _with_retries(attempt, self.retries, self.backoff_s, time.sleep)

    def embed(self, text: str) -> EmbeddingResponse:
        if not text:
            raise BackendError("cannot embed empty text")
        payload = {"model": self.embed_model, "input": text}
        doc = self._post("/embeddings", payload)
        try:
            vector = tuple(float(v) for v in doc["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed embedding payload: {exc}") from exc
        if self.expected_embed_dim is not None and len(vector) != self.expected_embed_dim:
            raise BackendConfigError(
                f"embedding dimension {len(vector)} != configured {self.expected_embed_dim}"
            )
        if not np.all(np.isfinite(vector)):
            raise BackendError("embedding contains non-finite entries")
        return EmbeddingResponse(vector=vector, model_id=str(doc.get("model", self.embed_model)))


def approx_token_count(text: str) -> int:
    """Deterministic stand-in token count used by the mock backend."""
    return max(1, (len(text) + 3) // 4) if text else 0


def hash_embedding(text: str, dim: int, salt: int = 0) -> tuple[float, ...]:
    """Deterministic unit vector derived from a text digest.

    Distinct texts map to (near-orthogonal) distinct directions; the same
    text always maps to the same vector, on any platform.
    """
    digest = hashlib.sha256(f"{salt}:{text}".encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "big")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    norm = float(np.linalg.norm(v))
    return tuple(float(x) for x in v / norm)


@dataclass
class ScriptRule:
    """One mock rule: fires when ``contains`` appears in the prompt.

    ``fail_times`` > 0 makes the rule raise ``error`` that many times
    before answering, which exercises the retry path deterministically.
    """

    contains: str
    response: str
    fail_times: int = 0
    error: str = "rate_limit"


_MOCK_ERRORS = {
    "rate_limit": RateLimitError,
    "transport": TransportError,
    "auth": AuthError,
}


@dataclass
class MockBackend:
    """Scripted deterministic backend for tests and offline runs.

    Rules are matched in order against system+user prompt text; the first
    hit answers. Unmatched prompts get ``default_response``. Embeddings
    are hash-derived unit vectors of ``embed_dim`` entries.
    """

    script: list[ScriptRule] = field(default_factory=list)
    default_response: str = ""
    embed_dim: int = 1536
    model_id: str = "mock"
    retries: int = 3

    def _respond(self, prompt: str) -> str:
        for rule in self.script:
            if rule.contains in prompt:
                if rule.fail_times > 0:
                    rule.fail_times -= 1
                    raise _MOCK_ERRORS[rule.error](f"scripted {rule.error}")
                return rule.response
        return self.default_response

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        prompt = request.system_prompt + "\n" + request.user_prompt

        def attempt() -> GenerationResponse:
            text = self._respond(prompt)
            return GenerationResponse(
                text=text,
                prompt_tokens=approx_token_count(prompt),
                completion_tokens=approx_token_count(text),
                latency_ms=0.0,
                model_id=self.model_id,
            )

        return _with_retries(attempt, self.retries, 0.0, None)

    def embed(self, text: str) -> EmbeddingResponse:
        if not text:
            raise BackendError("cannot embed empty text")
        return EmbeddingResponse(
            vector=hash_embedding(text, self.embed_dim), model_id=self.model_id
        )


class FnBackend:
    """Backend whose completions come from a callable; embeddings hashed.

    Used by scenario harnesses that need prompt-dependent state beyond
    substring scripting.
    """

    def __init__(self, respond: Callable[[GenerationRequest], str], embed_dim: int = 1536,
                 model_id: str = "mock-fn"):
        self._respond = respond
        self.embed_dim = embed_dim
        self.model_id = model_id

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        text = self._respond(request)
        prompt = request.system_prompt + "\n" + request.user_prompt
        return GenerationResponse(
            text=text,
            prompt_tokens=approx_token_count(prompt),
            completion_tokens=approx_token_count(text),
            latency_ms=0.0,
            model_id=self.model_id,
        )

    def embed(self, text: str) -> EmbeddingResponse:
        if not text:
            raise BackendError("cannot embed empty text")
        return EmbeddingResponse(
            vector=hash_embedding(text, self.embed_dim), model_id=self.model_id
        )


@dataclass(frozen=True)
class BackendSuite:
    """The independently configurable role slots of one run."""

    generator: object
    reporter: object
    meta: object
    evaluator: object
    embedder: object

    @classmethod
    def all_mock(cls, backend: object) -> "BackendSuite":
        return cls(generator=backend, reporter=backend, meta=backend,
                   evaluator=backend, embedder=backend)
