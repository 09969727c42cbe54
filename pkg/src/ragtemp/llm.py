"""Generation backends: temperature sampling, a mock LM, and a cached chat-completions client."""
from __future__ import annotations

import functools
import hashlib
import json
import logging
import os
import random
import re
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from ._rng import make_rng
from .dataset import Document
from .errors import (
    BackendError,
    CacheCorruption,
    ConfigError,
    EmptyLogits,
    NonFiniteLogit,
)

logger = logging.getLogger(__name__)

MAX_TEMPERATURE = 2.0
DEFAULT_MAX_TOKENS = 1000
EOS = "</s>"

RAG_SYSTEM_PROMPT = (
    "You are a question answering assistant. Answer the question using only the "
    "retrieved documents. Be brief."
)


def temperature_softmax(logits, T: float) -> np.ndarray:
    """p_k = exp(l_k / T) / sum_i exp(l_i / T); one-hot at the argmax when T == 0."""
    l = np.asarray(logits, dtype=np.float64)
    if l.ndim != 1 or l.size == 0:
        raise EmptyLogits("logits must be a non-empty vector")
    if not np.all(np.isfinite(l)):
        raise NonFiniteLogit("logits must be finite")
    if not T >= 0:
        raise ValueError(f"temperature must be >= 0, got {T}")
    if T == 0:
        p = np.zeros_like(l)
        p[int(np.argmax(l))] = 1.0  # argmax returns the lowest index on ties
        return p
    z = np.exp((l - l.max()) / T)
    return z / z.sum()


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum()) + 0.0  # one-hot gives +0.0, not -0.0


# --------------------------------------------------------------------------- requests


@dataclass(frozen=True)
class GenerationRequest:
    model: str
    messages: tuple[dict, ...]
    temperature: float
    max_tokens: int = DEFAULT_MAX_TOKENS
    run_index: int = 0
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(dict(m) for m in self.messages))
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")
        if self.run_index < 0:
            raise ConfigError("run_index must be >= 0")

    def cache_key(self) -> str:
        payload = json.dumps(
            {
                "model": self.model,
                "messages": list(self.messages),
                "temperature": repr(float(self.temperature)),
                "max_tokens": self.max_tokens,
                "run_index": self.run_index,
                "seed": self.seed,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GenerationResult:
    text: str
    finish_reason: str  # stop | length | error
    attempts: int
    from_cache: bool = False
    latency_ms: int = 0

    def __post_init__(self):
        if self.from_cache and self.attempts != 0:
            raise ValueError("cached results have attempts == 0")
        if not self.from_cache and self.attempts < 1:
            raise ValueError("fresh results need attempts >= 1")


def build_rag_prompt(question: str, context: Sequence[Document]) -> tuple[dict, ...]:
    """Chat messages for a RAG query.

    The user message is the document blocks followed by the question, all
    separated by blank lines. A block is ``"Title: <title>"``, a newline,
    then the document's sentences stripped and joined by single spaces::

        Title: A
        s0 s1

        Title: B
        s0

        Question: <question>
    """
    if not question:
        raise ValueError("question must be non-empty")
    blocks = [
        f"Title: {doc.title}\n" + " ".join(s.strip() for s in doc.sentences) for doc in context
    ]
    blocks.append(f"Question: {question}")
    return (
        {"role": "system", "content": RAG_SYSTEM_PROMPT},
        {"role": "user", "content": "\n\n".join(blocks)},
    )


# --------------------------------------------------------------------------- mock model

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def detokenize(tokens: Sequence[str]) -> str:
    return re.sub(r" ([.,!?;:%)\]])", r"\1", " ".join(tokens))


@dataclass(frozen=True, eq=False)
class MockModel:
    """Toy LM defined by a logit table.

    Positional tables have one row per position (a single row is reused for
    every position). Bigram tables have ``len(vocabulary) + 1`` rows: row 0
    holds the start logits and row ``i + 1`` the logits after token ``i``.
    A token equal to ``eos`` ends generation.
    """

    vocabulary: tuple[str, ...]
    logits: np.ndarray
    max_length: int
    bigram: bool = False
    eos: str | None = None

    def __post_init__(self):
        table = np.atleast_2d(np.asarray(self.logits, dtype=np.float64))
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        object.__setattr__(self, "logits", table)
        if table.shape[1] != len(self.vocabulary):
            raise ValueError("logit rows must match the vocabulary size")
        if self.bigram and table.shape[0] != len(self.vocabulary) + 1:
            raise ValueError("bigram table needs len(vocabulary) + 1 rows")
        if not self.bigram and table.shape[0] not in (1, self.max_length):
            raise ValueError("positional table needs 1 or max_length rows")

    def row(self, position: int, previous: int | None) -> np.ndarray:
        if self.bigram:
            return self.logits[0 if previous is None else previous + 1]
        return self.logits[0 if self.logits.shape[0] == 1 else position]

    @classmethod
    def from_messages(cls, messages, sharpness: float = 4.0, max_length: int = 48,
                      jitter: float = 0.5) -> "MockModel":
        """Bigram model over the text of the last user message.

        Lines starting with ``Question:`` supply the query. ``Title:`` lines
        and instruction lines (ending in a colon) are skipped, an ``Answer:``
        line becomes the sentence "<question stem> <answer>.", and every
        other line is corpus. Observed bigrams
        score ``sharpness * log1p(count)``, sentence ends lead to EOS, and the
        start row favours sentences that overlap the query.

        Equal counts would make several continuations exactly tied, so a real
        LM's low-temperature near-determinism would be lost. Each observed
        entry therefore gets a fixed bonus in ``[0, jitter * sharpness)``
        drawn from a generator keyed by the corpus text.
        """
        user = [m["content"] for m in messages if m.get("role") == "user"]
        lines = user[-1].splitlines() if user else []
        question, corpus, stem = [], [], ""
        for line in lines:
            if line.startswith("Question:"):
                stem = line[len("Question:"):].strip().rstrip("?").strip()
                question = _TOKEN_RE.findall(stem.lower())
            elif line.startswith("Answer:"):
                # sentence-form answer: the question stem followed by the short answer
                corpus.append(f"{stem} {line[len('Answer:'):].strip()}.")
            elif line.strip() and not line.startswith("Title:") and not line.rstrip().endswith(":"):
                corpus.append(line)
        sentences = []
        for line in corpus:
            for part in re.split(r"(?<=[.!?])\s+", line.strip()):
                toks = _TOKEN_RE.findall(part)
                if toks:
                    sentences.append(toks)
        vocab = sorted({t for s in sentences for t in s}) + [EOS]
        index = {t: i for i, t in enumerate(vocab)}
        V = len(vocab)
        counts = np.zeros((V + 1, V))
        start = np.zeros(V)
        qset = set(question)
        for toks in sentences:
            ids = [index[t] for t in toks]
            for a, b in zip(ids, ids[1:]):
                counts[a + 1, b] += 1
            counts[ids[-1] + 1, V - 1] += 1
            overlap = len(qset & {t.lower() for t in toks}) / len(qset) if qset else 0.0
            start[ids[0]] = max(start[ids[0]], 1.0 + overlap)
        table = sharpness * np.log1p(counts)
        table[0] = sharpness * start
        observed = table > 0
        table[observed] += jitter * sharpness * make_rng("mock-model", "\n".join(corpus)).random(observed.sum())
        table[V, :] = 0.0  # after EOS; unreachable
        return cls(tuple(vocab), table, max_length, bigram=True, eos=EOS)


def _draw(p: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(p)
    return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(p) - 1)


def mock_generate(request: GenerationRequest, model: MockModel) -> GenerationResult:
    """Sample from ``model`` with a generator seeded by (request.seed, request.run_index)."""
    T = request.temperature
    if not 0 <= T <= MAX_TEMPERATURE:
        raise ConfigError(f"temperature {T} outside [0, {MAX_TEMPERATURE}]")
    rng = make_rng("mock_generate", request.seed, request.run_index)
    limit = min(model.max_length, request.max_tokens)
    tokens, prev, finish = [], None, "length"
    for pos in range(limit):
        p = temperature_softmax(model.row(pos, prev), T)
        idx = int(np.argmax(p)) if T == 0 else _draw(p, rng)
        tok = model.vocabulary[idx]
        if model.eos is not None and tok == model.eos:
            finish = "stop"
            break
        tokens.append(tok)
        prev = idx
    return GenerationResult(detokenize(tokens), finish, attempts=1)


# --------------------------------------------------------------------------- backends


class Backend(Protocol):
    name: str
    max_temperature: float

    def complete(self, request: GenerationRequest) -> tuple[str, str, int]:
        """Return (text, finish_reason, attempts)."""


@dataclass
class MockBackend:
    """Offline backend: builds a MockModel from each prompt and samples from it."""

    name: str = "mock"
    sharpness: float = 4.0
    max_length: int = 48
    max_temperature: float = MAX_TEMPERATURE
    calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self._model = functools.lru_cache(maxsize=4096)(self._build)

    def _build(self, payload: str) -> MockModel:
        return MockModel.from_messages(json.loads(payload), self.sharpness, self.max_length)

    def complete(self, request):
        with self._lock:
            self.calls += 1
        model = self._model(json.dumps(list(request.messages), sort_keys=True))
        result = mock_generate(request, model)
        return result.text, result.finish_reason, 1


RETRY_STATUSES = frozenset({408, 409, 429, 500, 502, 503, 504})


def api_key_env(backend_name: str) -> str:
    return re.sub(r"[^A-Z0-9]", "_", backend_name.upper()) + "_API_KEY"


@dataclass
class HTTPBackend:
    """Chat-completions-compatible endpoint.

    The bearer token is read from ``<NAME>_API_KEY``; when unset no
    Authorization header is sent (useful for local servers). Throttling,
    server errors and transport failures are retried with full-jitter
    exponential backoff.
    """

    name: str
    base_url: str
    path: str = "/chat/completions"
    timeout: float = 120.0
    max_attempts: int = 5
    base_delay: float = 1.0
    max_temperature: float = MAX_TEMPERATURE
    transport: object = None
    sleep: object = time.sleep
    calls: int = 0

    def __post_init__(self):
        self._client = None
        self._lock = threading.Lock()

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/" + self.path.lstrip("/")

    def client(self):
        import httpx

        with self._lock:
            if self._client is None:
                self._client = httpx.Client(timeout=self.timeout, transport=self.transport)
            return self._client

    def _headers(self):
        key = os.environ.get(api_key_env(self.name), "").strip()
        return {"Authorization": f"Bearer {key}"} if key else {}

    def complete(self, request):
        import httpx

        body = {
            "model": request.model,
            "messages": list(request.messages),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        status, detail = None, ""
        for attempt in range(1, self.max_attempts + 1):
            with self._lock:
                self.calls += 1
            try:
                resp = self.client().post(self.url, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                status, detail = None, repr(exc)
            else:
                status = resp.status_code
                if status == 200:
                    try:
                        choice = resp.json()["choices"][0]
                        text = choice["message"]["content"] or ""
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise BackendError(f"{self.name}: malformed response: {exc}", status, attempt)
                    reason = choice.get("finish_reason")
                    return text, reason if reason in ("stop", "length") else "error", attempt
                detail = resp.text[:200]
                if status not in RETRY_STATUSES:
                    raise BackendError(f"{self.name}: HTTP {status}: {detail}", status, attempt)
            if attempt < self.max_attempts:
                self.sleep(random.uniform(0, self.base_delay * 2 ** (attempt - 1)))
        raise BackendError(
            f"{self.name}: gave up after {self.max_attempts} attempts (last status {status}): {detail}",
            status,
            self.max_attempts,
        )


# --------------------------------------------------------------------------- cache


class ResponseCache:
    """Content-addressed generation store: ``<dir>/<key[:2]>/<key>.json``.

    Writes go through a temp file and ``os.replace`` so readers never see a
    partial record.
    """

    def __init__(self, directory):
        self.directory = Path(directory)

    def path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    def get(self, request: GenerationRequest):
        key = request.cache_key()
        path = self.path(key)
        if not path.exists():
            return None
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
            header, text = record["header"], record["text"]
            digest = record["text_sha256"]
        except (ValueError, KeyError, TypeError) as exc:
            raise CacheCorruption(f"{path}: unreadable record ({exc})") from exc
        if header.get("key") != key or hashlib.sha256(text.encode("utf-8")).hexdigest() != digest:
            raise CacheCorruption(f"{path}: digest mismatch")
        return record

    def put(self, request: GenerationRequest, text: str, finish_reason: str) -> None:
        key = request.cache_key()
        path = self.path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        record = {
            "header": {
                "key": key,
                "model": request.model,
                "temperature": request.temperature,
                "run_index": request.run_index,
            },
            "text": text,
            "text_sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
            "finish_reason": finish_reason,
        }
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record, fh, ensure_ascii=False)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def generate(request: GenerationRequest, backend: Backend, cache: ResponseCache | None = None) -> GenerationResult:
    if not 0 <= request.temperature <= backend.max_temperature:
        raise ConfigError(
            f"temperature {request.temperature} outside [0, {backend.max_temperature}] for {backend.name}"
        )
    if cache is not None:
        hit = cache.get(request)
        if hit is not None:
            return GenerationResult(hit["text"], hit["finish_reason"], attempts=0, from_cache=True)
    t0 = time.perf_counter()
    text, finish, attempts = backend.complete(request)
    latency = int((time.perf_counter() - t0) * 1000)
    if cache is not None:
        cache.put(request, text, finish)
    return GenerationResult(text, finish, attempts, from_cache=False, latency_ms=latency)
