from __future__ import annotations

import itertools
import json

import httpx
import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragtemp.dataset import Document
from ragtemp.errors import BackendError, CacheCorruption, ConfigError, EmptyLogits, NonFiniteLogit
from ragtemp.llm import (
    GenerationRequest,
    GenerationResult,
    HTTPBackend,
    MockBackend,
    MockModel,
    ResponseCache,
    api_key_env,
    build_rag_prompt,
    entropy,
    generate,
    mock_generate,
    temperature_softmax,
)

mpmath.mp.dps = 40


def softmax_oracle(logits, T):
    """Tempered softmax evaluated term by term in 40-digit arithmetic."""
    terms = [mpmath.e ** (mpmath.mpf(float(l)) / mpmath.mpf(T)) for l in logits]
    z = mpmath.fsum(terms)
    return [float(t / z) for t in terms]


# ---------------------------------------------------------------------------- softmax


def test_uniform():
    assert temperature_softmax([0, 0], 1).tolist() == [0.5, 0.5]


def test_one_zero_at_unit_temperature():
    # 40-digit oracle: e/(e+1) = 0.7310585786300048792...
    np.testing.assert_allclose(temperature_softmax([1, 0], 1), [0.73106, 0.26894], atol=1e-5)
    np.testing.assert_allclose(temperature_softmax([1, 0], 1), softmax_oracle([1, 0], 1), rtol=0, atol=1e-15)


def test_zero_temperature_is_argmax_with_lowest_index_tie():
    assert temperature_softmax([3, 1], 0).tolist() == [1, 0]
    assert temperature_softmax([1, 5, 5, 2], 0).tolist() == [0, 1, 0, 0]


@pytest.mark.parametrize("bad, exc", [([], EmptyLogits), ([1, np.nan], NonFiniteLogit),
                                      ([np.inf, 0], NonFiniteLogit)])
def test_softmax_errors(bad, exc):
    with pytest.raises(exc):
        temperature_softmax(bad, 1.0)


def test_negative_temperature():
    with pytest.raises(ValueError):
        temperature_softmax([1, 2], -0.1)


def test_extreme_logits_stay_finite():
    p = temperature_softmax([1000.0, -1000.0, 999.0], 0.01)
    assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-12


logit_vectors = st.lists(st.floats(-20, 20, allow_nan=False), min_size=2, max_size=64)


@settings(max_examples=200, deadline=None)
@given(logits=logit_vectors, T=st.sampled_from([0.01, 0.2, 1.0, 2.0]))
def test_matches_high_precision_oracle(logits, T):
    got = temperature_softmax(logits, T)
    assert np.max(np.abs(got - softmax_oracle(logits, T))) < 1e-12
    assert abs(got.sum() - 1) < 1e-12 and np.all(got >= 0)


@settings(max_examples=100, deadline=None)
@given(logits=logit_vectors, c=st.floats(-50, 50), T=st.floats(0.05, 2.0))
def test_shift_invariance_and_standard_softmax(logits, c, T):
    l = np.asarray(logits)
    np.testing.assert_allclose(temperature_softmax(l + c, T), temperature_softmax(l, T), atol=1e-12)
    e = np.exp(l - l.max())
    np.testing.assert_allclose(temperature_softmax(l, 1.0), e / e.sum(), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(logits=logit_vectors.filter(lambda v: max(v) - min(v) > 1e-3))
def test_entropy_strictly_increasing_for_non_constant_logits(logits):
    grid = [round(0.1 * i, 1) for i in range(1, 21)]
    h = [entropy(temperature_softmax(logits, T)) for T in grid]
    assert all(b >= a for a, b in zip(h, h[1:]))


def test_entropy_strict_on_moderate_gaps():
    rng = np.random.default_rng(5)
    for _ in range(100):
        l = rng.uniform(-3, 3, size=rng.integers(2, 20))
        h = [entropy(temperature_softmax(l, T)) for T in np.arange(1, 21) / 10]
        assert all(b > a for a, b in zip(h, h[1:]))


@settings(max_examples=100, deadline=None)
@given(logits=st.lists(st.integers(-20, 20), min_size=2, max_size=30, unique=True))
def test_small_temperature_limit(logits):
    p = temperature_softmax(logits, 0.01)
    hot = temperature_softmax(logits, 0)
    assert np.delete(p, np.argmax(hot)).max() < 1e-9


# ---------------------------------------------------------------------------- mock model

TWO = MockModel(("a", "b"), [[1.0, 0.0]], max_length=1)


def _req(T, run=0, seed=11, messages=({"role": "user", "content": "x"},), model="m", max_tokens=1000):
    return GenerationRequest(model, messages, T, max_tokens=max_tokens, run_index=run, seed=seed)


def test_single_token_frequency():
    draws = [mock_generate(_req(1.0, run=i), TWO).text for i in range(20_000)]
    assert abs(draws.count("a") / len(draws) - 0.73106) < 0.015


def test_mock_greedy_at_zero():
    table = np.array([[0.0, 2.0, 1.0], [3.0, 0.0, 0.0], [0.0, 0.0, 0.5]])
    model = MockModel(("x", "y", "z"), table, max_length=3)
    texts = {mock_generate(_req(0.0, run=r, seed=s), model).text for r in range(5) for s in range(5)}
    assert texts == {"y x z"}


def test_mock_deterministic_and_length_limited():
    model = MockModel(("a", "b", "c"), [[0.3, 0.2, 0.1]], max_length=8)
    r = _req(1.3, run=2)
    assert mock_generate(r, model) == mock_generate(r, model)
    assert mock_generate(r, model).finish_reason == "length"
    assert len(mock_generate(_req(1.3, max_tokens=3), model).text.split()) == 3


def test_mock_validates_table():
    with pytest.raises(ValueError):
        MockModel(("a", "b"), [[1.0]], max_length=1)
    with pytest.raises(ValueError):
        MockModel(("a",), [[1.0], [1.0], [1.0]], max_length=1, bigram=True)


def _dissimilarity(texts):
    pairs = list(itertools.combinations([t.split() for t in texts], 2))
    diff = 0.0
    for x, y in pairs:
        n = max(len(x), len(y))
        diff += sum(a != b for a, b in itertools.zip_longest(x, y)) / n if n else 0.0
    return diff / len(pairs)


def test_run_to_run_variability_grows_with_temperature():
    rng = np.random.default_rng(0)
    model = MockModel(tuple("abcdef"), rng.normal(0, 2, size=(6, 6)), max_length=6)
    scores = []
    for T in (0.0, 0.2, 0.6, 1.0, 1.5, 2.0):
        scores.append(_dissimilarity([mock_generate(_req(T, run=i), model).text for i in range(120)]))
    assert scores[0] == 0.0
    assert all(b >= a for a, b in zip(scores, scores[1:])), scores


def test_bigram_model_from_prompt_stops_at_eos():
    msgs = build_rag_prompt("Where is Oslo?", [Document("Oslo", ("Oslo is in Norway.",))])
    model = MockModel.from_messages(msgs)
    result = mock_generate(_req(0.0, messages=msgs), model)
    assert result.text == "Oslo is in Norway."
    assert result.finish_reason == "stop"


def test_bigram_model_answers_reference_prompt_in_sentence_form():
    from ragtemp.refproc import build_ref_prompt

    msgs = build_ref_prompt("Where is Oslo?", "Norway")
    model = MockModel.from_messages(msgs)
    assert "Generate" not in model.vocabulary  # instruction line is not corpus
    assert mock_generate(_req(0.0, messages=msgs), model).text == "Where is Oslo Norway."


def test_bigram_ties_are_broken_deterministically():
    doc = Document("D", ("It is red.", "It is blue.", "It is green."))
    msgs = build_rag_prompt("What colour?", [doc])
    a, b = MockModel.from_messages(msgs), MockModel.from_messages(msgs)
    np.testing.assert_array_equal(a.logits, b.logits)
    after_is = a.logits[a.vocabulary.index("is") + 1]
    observed = after_is[after_is > 0]
    assert len(observed) == 3 and len(set(observed.tolist())) == 3

    def mode_share(T):
        texts = [mock_generate(_req(T, run=i, messages=msgs), a).text for i in range(200)]
        return max(texts.count(t) for t in set(texts)) / len(texts)

    assert mode_share(0.2) > 0.5 > mode_share(2.0)  # tied counts no longer mean a uniform choice


# ---------------------------------------------------------------------------- prompt


def test_prompt_layout_is_exact():
    ctx = [Document("A", (" s0", "s1 ")), Document("B", ("t0",))]
    system, user = build_rag_prompt("Why?", ctx)
    assert system["role"] == "system" and "retrieved documents" in system["content"]
    assert user == {"role": "user", "content": "Title: A\ns0 s1\n\nTitle: B\nt0\n\nQuestion: Why?"}
    assert build_rag_prompt("Why?", ctx) == (system, user)


def test_prompt_empty_context():
    _, user = build_rag_prompt("Q?", [])
    assert user["content"] == "Question: Q?"


def test_request_rejects_bad_fields():
    with pytest.raises(ConfigError):
        _req(1.0, max_tokens=0)
    with pytest.raises(ConfigError):
        _req(1.0, run=-1)


def test_result_attempt_invariant():
    with pytest.raises(ValueError):
        GenerationResult("x", "stop", attempts=0)
    with pytest.raises(ValueError):
        GenerationResult("x", "stop", attempts=1, from_cache=True)


def test_cache_key_depends_on_every_field():
    base = _req(0.4)
    variants = [_req(0.6), _req(0.4, run=1), _req(0.4, seed=12), _req(0.4, model="n"),
                _req(0.4, max_tokens=10), _req(0.4, messages=({"role": "user", "content": "y"},))]
    keys = {base.cache_key()} | {v.cache_key() for v in variants}
    assert len(keys) == 1 + len(variants)


# ---------------------------------------------------------------------------- generate / cache


def test_generate_caches(tmp_path):
    backend = MockBackend()
    cache = ResponseCache(tmp_path)
    msgs = build_rag_prompt("Where?", [Document("D", ("Lyon is big.", "Porto is small."))])
    r = _req(1.0, messages=msgs)
    first = generate(r, backend, cache)
    second = generate(r, backend, cache)
    assert (first.from_cache, first.attempts) == (False, 1)
    assert (second.from_cache, second.attempts) == (True, 0)
    assert second.text == first.text and backend.calls == 1
    record = json.loads(cache.path(r.cache_key()).read_text())
    assert record["header"] == {"key": r.cache_key(), "model": "m", "temperature": 1.0, "run_index": 0}


def test_cache_corruption_detected(tmp_path):
    cache = ResponseCache(tmp_path)
    r = _req(0.5)
    cache.put(r, "hello", "stop")
    path = cache.path(r.cache_key())
    record = json.loads(path.read_text())
    record["text"] = "tampered"
    path.write_text(json.dumps(record))
    with pytest.raises(CacheCorruption):
        cache.get(r)


def test_temperature_outside_backend_range():
    with pytest.raises(ConfigError):
        generate(_req(2.5), MockBackend())
    with pytest.raises(ConfigError):
        generate(_req(1.5), MockBackend(max_temperature=1.0))


def _chat_reply(text="Paris.", reason="stop"):
    return {"choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": reason}]}


def test_throttle_then_success(monkeypatch):
    monkeypatch.setenv("ACME_API_KEY", "sk-test")
    seen = []

    def handler(request):
        seen.append(request)
        if len(seen) == 1:
            return httpx.Response(429, text="slow down")
        return httpx.Response(200, json=_chat_reply())

    sleeps = []
    backend = HTTPBackend("acme", "https://api.example.test/v1", transport=httpx.MockTransport(handler),
                          sleep=sleeps.append)
    result = generate(_req(0.7), backend)
    assert (result.attempts, result.finish_reason, result.text) == (2, "stop", "Paris.")
    assert len(sleeps) == 1 and 0 <= sleeps[0] <= 1.0
    assert seen[0].url == "https://api.example.test/v1/chat/completions"
    assert seen[0].headers["authorization"] == "Bearer sk-test"
    body = json.loads(seen[0].content)
    assert body == {"model": "m", "messages": [{"role": "user", "content": "x"}],
                    "temperature": 0.7, "max_tokens": 1000}


def test_no_key_no_auth_header(monkeypatch):
    monkeypatch.delenv("LOCAL_LLM_API_KEY", raising=False)
    seen = []
    transport = httpx.MockTransport(lambda r: seen.append(r) or httpx.Response(200, json=_chat_reply()))
    HTTPBackend("local-llm", "http://x", transport=transport).complete(_req(0.1))
    assert "authorization" not in seen[0].headers
    assert api_key_env("local-llm") == "LOCAL_LLM_API_KEY"


def test_retries_exhausted_carry_last_status():
    sleeps = []
    backend = HTTPBackend("acme", "http://x", max_attempts=5, base_delay=1.0, sleep=sleeps.append,
                          transport=httpx.MockTransport(lambda r: httpx.Response(503)))
    with pytest.raises(BackendError) as info:
        backend.complete(_req(0.1))
    assert info.value.status == 503 and info.value.attempts == 5
    assert len(sleeps) == 4
    assert all(0 <= s <= 2 ** i for i, s in enumerate(sleeps))


def test_client_error_not_retried():
    calls = []
    transport = httpx.MockTransport(lambda r: calls.append(r) or httpx.Response(400, text="bad"))
    with pytest.raises(BackendError) as info:
        HTTPBackend("acme", "http://x", transport=transport, sleep=lambda s: None).complete(_req(0.1))
    assert info.value.status == 400 and len(calls) == 1


def test_length_finish_and_malformed_body():
    ok = HTTPBackend("a", "http://x", transport=httpx.MockTransport(
        lambda r: httpx.Response(200, json=_chat_reply("cut", "length"))))
    assert ok.complete(_req(0.1)) == ("cut", "length", 1)
    bad = HTTPBackend("a", "http://x", transport=httpx.MockTransport(lambda r: httpx.Response(200, json={})))
    with pytest.raises(BackendError):
        bad.complete(_req(0.1))


def test_unreachable_backend():
    backend = HTTPBackend("down", "http://127.0.0.1:9", max_attempts=1, timeout=2.0)
    with pytest.raises(BackendError) as info:
        backend.complete(_req(0.1))
    assert info.value.status is None
