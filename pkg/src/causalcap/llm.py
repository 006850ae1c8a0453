"""Text-generation gateway: one client API over a scripted stub and HTTP backends.

The stub drives every test; the HTTP backend speaks the usual chat-completion
JSON shape with URL/model taken from config and the API key from an
environment variable.
"""
from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence


class BackendError(RuntimeError):
    pass


class TransientBackendError(BackendError):
    """Retryable transport failure."""


class BackendUnreachableError(BackendError):
    """Raised once the retry budget is spent."""


class ContextOverflowError(BackendError):
    """Prompt exceeds the backend's context limit; never retried."""


@dataclass
class GenerationRequest:
    prompt: str
    max_tokens: int = 256
    temperature: float = 0.7
    seed: int | None = None
    backend_id: str = "stub"

    def __post_init__(self) -> None:
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")


@dataclass
class GenerationResult:
    text: str
    backend_id: str
    latency_ms: int
    attempt: int


class Backend(Protocol):
    def complete(self, req: GenerationRequest) -> str: ...


class StubBackend:
    """Deterministic scripted backend.

    Args:
        script: responses returned in order; the last one repeats once the
            script is exhausted.
        fn: alternative to script, computes the response from the request
            (referentially transparent when it only reads prompt and seed).
        fail_times: raise a transient error on this many leading calls.
        context_limit: maximum prompt length in characters.
    """

    def __init__(
        self,
        script: Sequence[str] | None = None,
        fn: Callable[[GenerationRequest], str] | None = None,
        fail_times: int = 0,
        context_limit: int | None = None,
    ):
        if (script is None) == (fn is None):
            raise ValueError("provide exactly one of script/fn")
        self._script = list(script) if script is not None else None
        self._fn = fn
        self._fail_left = fail_times
        self._context_limit = context_limit
        self._cursor = 0
        self._lock = threading.Lock()

    def complete(self, req: GenerationRequest) -> str:
        if self._context_limit is not None and len(req.prompt) > self._context_limit:
            raise ContextOverflowError(
                f"prompt length {len(req.prompt)} exceeds limit {self._context_limit}"
            )
        with self._lock:
            if self._fail_left > 0:
                self._fail_left -= 1
                raise TransientBackendError("scripted transient failure")
            if self._script is not None:
                text = self._script[min(self._cursor, len(self._script) - 1)]
                self._cursor += 1
                return text
        assert self._fn is not None
        return self._fn(req)  # outside the lock: fn may itself block


class HttpBackend:
    """Chat-completion endpoint client (OpenAI-style request/response bodies)."""

    def __init__(
        self,
        url: str,
        model: str,
        api_key_env: str = "LLM_API_KEY",
        timeout_s: float = 120.0,
    ):
        self.url = url
        self.model = model
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s

    def complete(self, req: GenerationRequest) -> str:
        import httpx

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload: dict = {
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }
        if req.seed is not None:
            payload["seed"] = req.seed
        try:
            resp = httpx.post(self.url, json=payload, headers=headers, timeout=self.timeout_s)
        except httpx.TransportError as exc:
            raise TransientBackendError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"status {resp.status_code}")
        if resp.status_code >= 400:
            body = resp.text[:500]
            if "context" in body.lower():
                raise ContextOverflowError(body)
            raise BackendError(f"status {resp.status_code}: {body}")
        return resp.json()["choices"][0]["message"]["content"]


class LlmClient:
    """Adds retry-with-backoff and a concurrency cap around a backend.

    At most ``max_concurrent`` requests are in flight per client;
    ``max_retries`` transient failures are retried with exponential backoff
    before giving up.
    """

    def __init__(
        self,
        backend: Backend,
        backend_id: str = "stub",
        max_retries: int = 3,
        backoff_s: float = 0.05,
        max_concurrent: int = 4,
    ):
        self.backend = backend
        self.backend_id = backend_id
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._sem = threading.BoundedSemaphore(max_concurrent)

    def generate(self, req: GenerationRequest) -> GenerationResult:
        attempt = 0
        while True:
            attempt += 1
            start = time.perf_counter()
            try:
                with self._sem:
                    text = self.backend.complete(req)
                latency_ms = int((time.perf_counter() - start) * 1000)
                return GenerationResult(text, self.backend_id, latency_ms, attempt)
            except TransientBackendError as exc:
                if attempt > self.max_retries:
                    raise BackendUnreachableError(
                        f"{self.backend_id}: gave up after {attempt} attempts"
                    ) from exc
                time.sleep(self.backoff_s * 2 ** (attempt - 1))


class BackendRegistry:
    """Dispatches requests to the client registered under req.backend_id."""

    def __init__(self) -> None:
        self._clients: dict[str, LlmClient] = {}

    def register(self, client: LlmClient) -> None:
        self._clients[client.backend_id] = client

    def get(self, backend_id: str) -> LlmClient:
        if backend_id not in self._clients:
            raise BackendError(f"no backend registered under {backend_id!r}")
        return self._clients[backend_id]

    def generate(self, req: GenerationRequest) -> GenerationResult:
        return self.get(req.backend_id).generate(req)
