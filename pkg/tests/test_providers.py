from __future__ import annotations

import numpy as np
import pytest

from ragfuzz.errors import OpenWorldKey, ProviderUnavailable
from ragfuzz.ledger import CostLedger
from ragfuzz.prompts import RenderedPrompt
from ragfuzz.providers import (
    Completion,
    EmbeddingService,
    FlakyBackend,
    HashEmbedder,
    LLMService,
    RateLimiter,
    RecordingBackend,
    ReplayBackend,
    ScriptEntry,
    ScriptedLLM,
    approx_tokens,
    binding_digest,
    build_request_text,
)
from ragfuzz.rag import Chunk, RetrievedChunk


def prompt(template_id="codegen", **bindings) -> RenderedPrompt:
    bindings = bindings or {"pass_name": "P", "reqs": "R"}
    return RenderedPrompt(template_id=template_id, text="PROMPT BODY", bindings=bindings)


def ctx(*texts: str) -> list[RetrievedChunk]:
    return [
        RetrievedChunk(chunk=Chunk(f"d#{i}", "d", t, i), distance=0.1)
        for i, t in enumerate(texts)
    ]


def test_scripted_mock_passthrough():
    llm = ScriptedLLM(
        [ScriptEntry("codegen", {"pass_name": "P"}, ["RESPONSE"], usages=[(11, 7)])]
    )
    ledger = CostLedger()
    service = LLMService(llm, ledger, sleep=lambda s: None)
    completion = service.llm_complete(prompt(), [], stage="codegen")
    assert completion.text == "RESPONSE"
    assert (completion.input_tokens, completion.output_tokens) == (11, 7)
    assert len(ledger) == 1
    assert ledger.entries()[0].stage == "codegen"


def test_scripted_mock_closed_world():
    llm = ScriptedLLM([ScriptEntry("repair", {"code": "*"}, ["x"])])
    service = LLMService(llm, CostLedger(), sleep=lambda s: None)
    with pytest.raises(OpenWorldKey):
        service.llm_complete(prompt(), [], stage="codegen")


def test_scripted_mock_specificity_and_sequences():
    llm = ScriptedLLM(
        [
            ScriptEntry("codegen", {"pass_name": "*"}, ["generic"]),
            ScriptEntry("codegen", {"pass_name": "P", "reqs": "R"}, ["first", "second"]),
        ]
    )
    service = LLMService(llm, CostLedger(), sleep=lambda s: None)
    assert service.llm_complete(prompt(), [], "codegen").text == "first"
    assert service.llm_complete(prompt(), [], "codegen").text == "second"
    assert service.llm_complete(prompt(), [], "codegen").text == "second"  # last repeats
    other = prompt(pass_name="Q", reqs="R2")
    assert service.llm_complete(other, [], "codegen").text == "generic"


def test_digest_matcher():
    code = "int main() { return 0; }"
    llm = ScriptedLLM(
        [ScriptEntry("repair", {"code": f"sha256:{binding_digest(code)}"}, ["fixed"])]
    )
    service = LLMService(llm, CostLedger(), sleep=lambda s: None)
    got = service.llm_complete(prompt("repair", code=code, error="E"), [], "repair")
    assert got.text == "fixed"


def test_retry_twice_then_success_counts_three_attempts():
    backend = FlakyBackend(failures=2, response="done")
    service = LLMService(backend, CostLedger(), max_retries=3, sleep=lambda s: None)
    completion = service.llm_complete(prompt(), [], stage="codegen")
    assert completion.text == "done"
    assert completion.attempts == 3
    assert backend.calls == 3


def test_retries_exhausted_raise_provider_unavailable():
    backend = FlakyBackend(failures=10)
    ledger = CostLedger()
    service = LLMService(backend, ledger, max_retries=2, sleep=lambda s: None)
    with pytest.raises(ProviderUnavailable):
        service.llm_complete(prompt(), [], stage="codegen")
    assert backend.calls == 3  # 1 try + 2 retries
    assert len(ledger) == 0  # failed transport calls bill nothing


def test_context_prepended_with_delimiters():
    wire = build_request_text(prompt(), ctx("chunk one", "chunk two"))
    assert wire.index("chunk one") < wire.index("chunk two") < wire.index("PROMPT BODY")
    assert "=== Retrieved context ===" in wire
    assert build_request_text(prompt(), []) == "PROMPT BODY"


def test_record_then_replay_is_byte_identical(tmp_path):
    cassette = tmp_path / "session.json"
    live = ScriptedLLM(
        [ScriptEntry("codegen", {"pass_name": "*"}, ["live answer"], usages=[(100, 50)])]
    )
    ledger = CostLedger()
    service = LLMService(live, ledger, sleep=lambda s: None)
    recorded: list[Completion] = []

    class PromptAwareRecorder(RecordingBackend):
        def complete_prompt(self, p, wire):
            completion = self.inner.complete_prompt(p, wire)
            self.interactions.append(
                {
                    "request": wire,
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

    recorder = PromptAwareRecorder(live, cassette)
    rec_service = LLMService(recorder, CostLedger(), sleep=lambda s: None)
    recorded.append(rec_service.llm_complete(prompt(), ctx("c"), "codegen"))

    replay_service = LLMService(ReplayBackend(cassette), CostLedger(), sleep=lambda s: None)
    replayed = replay_service.llm_complete(prompt(), ctx("c"), "codegen")
    assert replayed.text == recorded[0].text
    assert replayed.input_tokens == recorded[0].input_tokens
    assert replayed.output_tokens == recorded[0].output_tokens
    assert replayed.model_id == recorded[0].model_id


def test_replay_strict_mismatch(tmp_path):
    cassette = tmp_path / "c.json"
    cassette.write_text(
        '[{"request": "other", "response": {"text": "t", "input_tokens": 1, '
        '"output_tokens": 1, "model_id": "m"}}]'
    )
    service = LLMService(ReplayBackend(cassette), CostLedger(), sleep=lambda s: None)
    with pytest.raises(OpenWorldKey):
        service.llm_complete(prompt(), [], "codegen")


def test_hash_embedder_determinism_and_separation():
    embedder = HashEmbedder(dim=64, seed=1)
    a1 = embedder.embed_text("hello world")
    a2 = embedder.embed_text("hello world")
    b = embedder.embed_text("something else")
    assert np.array_equal(a1, a2)
    assert np.linalg.norm(a1) == pytest.approx(1.0, abs=1e-12)
    from ragfuzz.rag import cosine_distance

    assert cosine_distance(a1, b) > 0


def test_embedding_cache_hits_record_no_tokens():
    ledger = CostLedger()
    service = EmbeddingService(HashEmbedder(dim=32), ledger)
    service.embed_text("alpha")
    before = ledger.total_tokens()
    service.embed_text("alpha")  # cache hit
    assert ledger.total_tokens() == before
    assert len(ledger) == 1


def test_embedding_cache_persists(tmp_path):
    cache = tmp_path / "emb.jsonl"
    ledger1 = CostLedger()
    s1 = EmbeddingService(HashEmbedder(dim=16), ledger1, cache_path=cache)
    v1 = s1.embed_text("persist me")
    ledger2 = CostLedger()
    s2 = EmbeddingService(HashEmbedder(dim=16), ledger2, cache_path=cache)
    v2 = s2.embed_text("persist me")
    assert np.allclose(v1, v2)
    assert len(ledger2) == 0  # served from disk cache


def test_rate_limiter_waits_when_window_full():
    now = [0.0]
    slept = []

    limiter = RateLimiter(2, clock=lambda: now[0], sleep=lambda s: slept.append(s))
    limiter.acquire()
    limiter.acquire()
    limiter.acquire()  # third call within the same minute must wait
    assert slept and slept[0] == pytest.approx(60.0)


def test_approx_tokens():
    assert approx_tokens("") == 0
    assert approx_tokens("abcd") == 1
    assert approx_tokens("abcde") == 2


# --- HTTP backend (requests monkeypatched; no sockets) ---

class FakeResponse:
    def __init__(self, status_code: int, payload: dict | None = None):
        self.status_code = status_code
        self._payload = payload or {}
        self.text = str(payload)

    def json(self):
        return self._payload


def http_backend(monkeypatch, response: FakeResponse):
    from ragfuzz.providers import HttpChatBackend, ProviderConfig

    monkeypatch.setenv("TEST_API_KEY", "k")
    monkeypatch.setattr("requests.post", lambda *a, **kw: response)
    return HttpChatBackend(
        ProviderConfig(endpoint="https://example.invalid/v1", api_key_env="TEST_API_KEY")
    )


def test_http_backend_missing_key_is_auth_failure(monkeypatch):
    from ragfuzz.errors import AuthFailure
    from ragfuzz.providers import HttpChatBackend, ProviderConfig

    monkeypatch.delenv("NO_SUCH_KEY", raising=False)
    backend = HttpChatBackend(
        ProviderConfig(endpoint="https://example.invalid", api_key_env="NO_SUCH_KEY")
    )
    with pytest.raises(AuthFailure):
        backend.complete("hello")


def test_http_backend_401_is_auth_failure(monkeypatch):
    from ragfuzz.errors import AuthFailure

    with pytest.raises(AuthFailure):
        http_backend(monkeypatch, FakeResponse(401)).complete("x")


def test_http_backend_5xx_is_transport_error(monkeypatch):
    from ragfuzz.errors import TransportError

    with pytest.raises(TransportError):
        http_backend(monkeypatch, FakeResponse(503)).complete("x")


def test_http_backend_4xx_content_error_not_retried(monkeypatch):
    from ragfuzz.errors import ProviderError, TransportError

    with pytest.raises(ProviderError) as exc:
        http_backend(monkeypatch, FakeResponse(422, {"error": "bad"})).complete("x")
    assert not isinstance(exc.value, TransportError)


def test_http_backend_parses_usage(monkeypatch):
    payload = {
        "choices": [{"message": {"content": "hi"}}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 3},
    }
    completion = http_backend(monkeypatch, FakeResponse(200, payload)).complete("x")
    assert completion.text == "hi"
    assert (completion.input_tokens, completion.output_tokens) == (12, 3)
    assert not completion.approximate_usage


def test_http_backend_approximates_missing_usage(monkeypatch):
    payload = {"choices": [{"message": {"content": "words here"}}]}
    completion = http_backend(monkeypatch, FakeResponse(200, payload)).complete("abcdefgh")
    assert completion.approximate_usage
    assert completion.input_tokens == 2  # ceil(8 / 4)
