"""LLM-completion and text-embedding services.

One production HTTP backend speaks a chat-completion wire format; scripted
mocks make the whole pipeline runnable offline and bit-reproducible. Every
completed provider exchange appends exactly one cost-ledger entry. Retrieved
context is prepended to the prompt as plain delimited text so the wire
contract stays provider-agnostic.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AuthFailure,
    OpenWorldKey,
    ProviderError,
    ProviderTimeout,
    ProviderUnavailable,
    TransportError,
)
from .ledger import CostLedger
from .prompts import RenderedPrompt
from .rag import RetrievedChunk

CONTEXT_HEADER = "=== Retrieved context ==="
CONTEXT_FOOTER = "=== End of retrieved context ==="
CONTEXT_SEPARATOR = "\n---\n"


@dataclass(frozen=True)
class Completion:
    text: str
    input_tokens: int
    output_tokens: int
    model_id: str
    attempts: int = 1
    approximate_usage: bool = False


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str = ""
    model_id: str = "gpt-4"
    api_key_env: str = ""
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5
    requests_per_minute: int = 0  # 0 = unlimited
    sampling: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def approx_tokens(text: str) -> int:
    """ceil(chars/4): the fallback when a provider omits usage numbers."""
    return math.ceil(len(text) / 4)


def build_request_text(prompt: RenderedPrompt, context: list[RetrievedChunk]) -> str:
    if not context:
        return prompt.text
    body = CONTEXT_SEPARATOR.join(rc.chunk.text for rc in context)
    return f"{CONTEXT_HEADER}\n{body}\n{CONTEXT_FOOTER}\n\n{prompt.text}"


class RateLimiter:
    """Sliding-window limiter gating outbound production calls."""

    def __init__(self, requests_per_minute: int, clock=time.monotonic, sleep=time.sleep):
        self.limit = requests_per_minute
        self._clock = clock
        self._sleep = sleep
        self._window: list[float] = []

    def acquire(self) -> None:
        if self.limit <= 0:
            return
        now = self._clock()
        self._window = [t for t in self._window if now - t < 60.0]
        if len(self._window) >= self.limit:
            wait = 60.0 - (now - self._window[0])
            if wait > 0:
                self._sleep(wait)
        self._window.append(self._clock())


# --------------------------------------------------------------------------
# LLM backends
# --------------------------------------------------------------------------

class HttpChatBackend:
    """Chat-completion HTTP backend. Secrets come from the named env var and
    are never persisted anywhere in campaign artifacts."""

    def __init__(self, config: ProviderConfig):
        config.validate()
        self.config = config
        self.model_id = config.model_id

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env, "")
        if not key:
            raise AuthFailure(f"environment variable {self.config.api_key_env!r} is unset")
        return key

    def complete(self, text: str) -> Completion:
        import requests

        payload = {
            "model": self.config.model_id,
            "messages": [{"role": "user", "content": text}],
            **self.config.sampling,
        }
        try:
            resp = requests.post(
                self.config.endpoint,
                json=payload,
                headers={"Authorization": f"Bearer {self._api_key()}"},
                timeout=self.config.timeout,
            )
        except requests.Timeout as exc:
            raise ProviderTimeout(str(exc)) from exc
        except requests.ConnectionError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthFailure(f"provider returned {resp.status_code}")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"provider returned {resp.status_code}")
        if resp.status_code != 200:
            raise ProviderError(f"provider returned {resp.status_code}: {resp.text[:200]}")
        data = resp.json()
        content = data["choices"][0]["message"]["content"]
        usage = data.get("usage") or {}
        if "prompt_tokens" in usage:
            return Completion(
                text=content,
                input_tokens=int(usage["prompt_tokens"]),
                output_tokens=int(usage.get("completion_tokens", 0)),
                model_id=self.config.model_id,
            )
        return Completion(
            text=content,
            input_tokens=approx_tokens(text),
            output_tokens=approx_tokens(content),
            model_id=self.config.model_id,
            approximate_usage=True,
        )


def binding_digest(value: str) -> str:
    return hashlib.sha256(value.encode("utf-8")).hexdigest()


@dataclass
class ScriptEntry:
    """One canned LLM behavior: matchers over prompt bindings -> responses.

    Matcher values are exact strings, "sha256:<hex>" digests of the binding
    value, or "*". Responses are consumed in order; the last one repeats.
    """

    template_id: str
    match: dict[str, str]
    responses: list[str]
    usages: list[tuple[int, int]] | None = None
    _cursor: int = 0

    def specificity(self) -> int:
        return sum(1 for v in self.match.values() if v != "*")

    def matches(self, bindings: dict[str, str]) -> bool:
        for name, expected in self.match.items():
            actual = bindings.get(name)
            if actual is None:
                return False
            if expected == "*":
                continue
            if expected.startswith("sha256:"):
                if binding_digest(actual) != expected[len("sha256:"):]:
                    return False
            elif actual != expected:
                return False
        return True

    def next_response(self) -> tuple[str, tuple[int, int] | None]:
        i = min(self._cursor, len(self.responses) - 1)
        self._cursor += 1
        usage = None
        if self.usages:
            usage = self.usages[min(i, len(self.usages) - 1)]
        return self.responses[i], usage


class ScriptedLLM:
    """Closed-world mock: an unmatched prompt is an error, never a guess."""

    model_id = "mock-llm"

    def __init__(self, entries: list[ScriptEntry]):
        self.entries = entries
        self.calls: list[RenderedPrompt] = []
        self._lock = threading.Lock()

    def reset(self) -> None:
        for entry in self.entries:
            entry._cursor = 0
        self.calls = []

    def complete_prompt(self, prompt: RenderedPrompt, wire_text: str) -> Completion:
        candidates = [
            e
            for e in self.entries
            if e.template_id == prompt.template_id and e.matches(prompt.bindings)
        ]
        if not candidates:
            raise OpenWorldKey(
                f"no scripted response for template {prompt.template_id!r} "
                f"with bindings {sorted(prompt.bindings)}"
            )
        best = max(candidates, key=lambda e: e.specificity())
        with self._lock:
            self.calls.append(prompt)
            text, usage = best.next_response()
        if usage is None:
            return Completion(
                text=text,
                input_tokens=approx_tokens(wire_text),
                output_tokens=approx_tokens(text),
                model_id=self.model_id,
                approximate_usage=True,
            )
        return Completion(
            text=text, input_tokens=usage[0], output_tokens=usage[1], model_id=self.model_id
        )


class FlakyBackend:
    """Test helper: raises scripted transport errors before succeeding."""

    model_id = "mock-llm"

    def __init__(self, failures: int, response: str = "ok"):
        self.failures = failures
        self.response = response
        self.calls = 0

    def complete(self, text: str) -> Completion:
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError(f"scripted transport failure #{self.calls}")
        return Completion(
            text=self.response,
            input_tokens=approx_tokens(text),
            output_tokens=approx_tokens(self.response),
            model_id=self.model_id,
            approximate_usage=True,
        )


# --------------------------------------------------------------------------
# Record / replay cassettes
# --------------------------------------------------------------------------

class RecordingBackend:
    """Wraps a live backend and captures full request/response pairs."""

    def __init__(self, inner, cassette_path: Path):
        self.inner = inner
        self.model_id = inner.model_id
        self.path = Path(cassette_path)
        self.interactions: list[dict] = []

    def complete(self, text: str) -> Completion:
        completion = self.inner.complete(text)
        self.interactions.append(
            {
                "request": text,
                "response": {
                    "text": completion.text,
                    "input_tokens": completion.input_tokens,
                    "output_tokens": completion.output_tokens,
                    "model_id": completion.model_id,
                },
            }
        )
        self.save()
        return completion

    def save(self) -> None:
        self.path.write_text(json.dumps(self.interactions, indent=2, sort_keys=True))


class ReplayBackend:
    """Plays a recorded cassette back verbatim, in order."""

    def __init__(self, cassette_path: Path, strict: bool = True):
        self.interactions = json.loads(Path(cassette_path).read_text())
        self.strict = strict
        self.cursor = 0
        self.model_id = (
            self.interactions[0]["response"]["model_id"] if self.interactions else "replay"
        )

    def complete(self, text: str) -> Completion:
        if self.cursor >= len(self.interactions):
            raise OpenWorldKey("cassette exhausted")
        interaction = self.interactions[self.cursor]
        self.cursor += 1
        if self.strict and interaction["request"] != text:
            raise OpenWorldKey(
                f"cassette request #{self.cursor - 1} does not match the live request"
            )
        resp = interaction["response"]
        return Completion(
            text=resp["text"],
            input_tokens=resp["input_tokens"],
            output_tokens=resp["output_tokens"],
            model_id=resp["model_id"],
        )


# --------------------------------------------------------------------------
# Services: retry + ledger + cache wiring
# --------------------------------------------------------------------------

class LLMService:
    """Retry/ledger wrapper over a completion backend.

    Transient transport failures are retried with exponential backoff up to
    max_retries; content-level provider responses are never retried.
    """

    def __init__(
        self,
        backend,
        ledger: CostLedger,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        rate_limiter: RateLimiter | None = None,
        sleep=time.sleep,
        on_exchange=None,
    ):
        self.backend = backend
        self.ledger = ledger
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.rate_limiter = rate_limiter
        self._sleep = sleep
        self._on_exchange = on_exchange

    def llm_complete(
        self,
        prompt: RenderedPrompt,
        context: list[RetrievedChunk],
        stage: str,
    ) -> Completion:
        wire_text = build_request_text(prompt, context)
        attempts = 0
        delay = self.backoff_base
        while True:
            attempts += 1
            if self.rate_limiter:
                self.rate_limiter.acquire()
            try:
                if hasattr(self.backend, "complete_prompt"):
                    completion = self.backend.complete_prompt(prompt, wire_text)
                else:
                    completion = self.backend.complete(wire_text)
                break
            except TransportError as exc:
                if attempts >= self.max_retries + 1:
                    raise ProviderUnavailable(
                        f"gave up after {attempts} attempts: {exc}"
                    ) from exc
                self._sleep(delay)
                delay *= 2
        self.ledger.record(
            stage=stage,
            model_id=completion.model_id,
            input_tokens=completion.input_tokens,
            output_tokens=completion.output_tokens,
            approximate=completion.approximate_usage,
        )
        final = Completion(
            text=completion.text,
            input_tokens=completion.input_tokens,
            output_tokens=completion.output_tokens,
            model_id=completion.model_id,
            attempts=attempts,
            approximate_usage=completion.approximate_usage,
        )
        if self._on_exchange is not None:
            self._on_exchange(prompt, final)
        return final


class HttpEmbeddingBackend:
    """HTTP embedding endpoint speaking the common embeddings wire format."""

    def __init__(self, config: ProviderConfig, dim: int):
        config.validate()
        self.config = config
        self.model_id = config.model_id
        self.dim = dim

    def embed_text(self, text: str) -> np.ndarray:
        import requests

        key = os.environ.get(self.config.api_key_env, "")
        if not key:
            raise AuthFailure(f"environment variable {self.config.api_key_env!r} is unset")
        try:
            resp = requests.post(
                self.config.endpoint,
                json={"model": self.config.model_id, "input": text},
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.config.timeout,
            )
        except requests.Timeout as exc:
            raise ProviderTimeout(str(exc)) from exc
        except requests.ConnectionError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthFailure(f"provider returned {resp.status_code}")
        if resp.status_code != 200:
            raise ProviderError(f"provider returned {resp.status_code}")
        vector = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        if vector.shape[0] != self.dim:
            raise ProviderError(
                f"embedding dim {vector.shape[0]} does not match configured {self.dim}"
            )
        return vector


class HashEmbedder:
    """Deterministic mock embedding backend: a seeded hash-derived unit vector.

    Identical input always embeds to the identical vector, across processes,
    so mock campaigns are bit-reproducible.
    """

    model_id = "mock-embedder"

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim <= 0:
            raise ValueError("dim must be > 0")
        self.dim = dim
        self.seed = seed

    def embed_text(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}|{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        vec = rng.standard_normal(self.dim)
        return vec / np.linalg.norm(vec)


class EmbeddingService:
    """Content-hash cache plus ledger accounting around an embedding backend.

    A cache hit performs no provider call and records no tokens.
    """

    def __init__(self, backend, ledger: CostLedger, cache_path: Path | None = None):
        self.backend = backend
        self.ledger = ledger
        self.dim = backend.dim
        self._cache: dict[str, np.ndarray] = {}
        self._cache_path = Path(cache_path) if cache_path else None
        if self._cache_path and self._cache_path.exists():
            for line in self._cache_path.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._cache[rec["hash"]] = np.asarray(rec["vector"], dtype=np.float64)

    def embed_text(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        key = hashlib.sha256(text.encode("utf-8")).hexdigest()
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        vector = self.backend.embed_text(text)
        self.ledger.record(
            stage="embedding",
            model_id=self.backend.model_id,
            input_tokens=approx_tokens(text),
            output_tokens=0,
            approximate=True,
        )
        self._cache[key] = vector
        if self._cache_path:
            with open(self._cache_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"hash": key, "vector": vector.tolist()}) + "\n")
        return vector
