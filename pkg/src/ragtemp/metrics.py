"""Answer scoring: EM, token F1, ROUGE-1/2/L, greedy-matching BERTScore, embedding cosine.

Lexical metrics work on QA-normalized tokens (lowercase, punctuation and
articles removed). When both token lists are empty a score is 1, when
exactly one is empty it is 0.
"""
from __future__ import annotations

import collections
import hashlib
import json
import re
import string
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BackendError, DimensionMismatch, EmptyEmbeddings, EmptyText

METRICS = ("em", "f1", "rouge1", "rouge2", "rougeL", "bertscore_f1", "embed_cosine")
LEXICAL_METRICS = ("em", "f1", "rouge1", "rouge2", "rougeL")

_PUNCT = set(string.punctuation)
_ARTICLES = re.compile(r"\b(a|an|the)\b")


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: str
    model: str
    temperature: float
    perturbation: str
    question_type: str
    fact_count: int
    run_index: int
    metric: str
    value: float
    cached: bool = False

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"{self.metric} value {self.value} outside [0, 1]")

    @property
    def identity(self) -> tuple:
        return (self.sample_id, self.model, self.temperature, self.perturbation,
                self.run_index, self.metric)


def normalize(text: str) -> list[str]:
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return text.split()


def exact_match(pred: str, ref: str) -> int:
    return int(normalize(pred) == normalize(ref))


def _f1(overlap: int, n_pred: int, n_ref: int) -> float:
    if n_pred == 0 and n_ref == 0:
        return 1.0
    if n_pred == 0 or n_ref == 0 or overlap == 0:
        return 0.0
    # harmonic mean of overlap/n_pred and overlap/n_ref, as one exact integer ratio
    return 2 * overlap / (n_pred + n_ref)


def token_f1(pred: str, ref: str) -> float:
    p, r = normalize(pred), normalize(ref)
    common = collections.Counter(p) & collections.Counter(r)
    return _f1(sum(common.values()), len(p), len(r))


def ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_prf(pred: str, ref: str, variant) -> tuple[float, float, float]:
    """(precision, recall, f1) for ROUGE-1, -2 or -L on normalized tokens."""
    p, r = normalize(pred), normalize(ref)
    variant = str(variant).upper()
    if variant == "L":
        hits, n_p, n_r = lcs_length(p, r), len(p), len(r)
    elif variant in ("1", "2"):
        n = int(variant)
        pg, rg = ngrams(p, n), ngrams(r, n)
        hits = sum((collections.Counter(pg) & collections.Counter(rg)).values())
        n_p, n_r = len(pg), len(rg)
    else:
        raise ValueError(f"unknown ROUGE variant {variant!r}")
    f = _f1(hits, n_p, n_r)
    if n_p == 0 and n_r == 0:
        return 1.0, 1.0, 1.0
    prec = hits / n_p if n_p else 0.0
    rec = hits / n_r if n_r else 0.0
    return prec, rec, f


def rouge(pred: str, ref: str, variant) -> float:
    return rouge_prf(pred, ref, variant)[2]


# --------------------------------------------------------------------------- embeddings


@dataclass(frozen=True, eq=False)
class TokenEmbeddings:
    tokens: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if len(self.tokens) == 0:
            v = v.reshape(0, v.shape[-1] if v.size else 0)
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "vectors", v)
        if v.shape[0] != len(self.tokens):
            raise ValueError("one vector per token required")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding vectors must be finite")


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


def bertscore_greedy(pred_emb: TokenEmbeddings, ref_emb: TokenEmbeddings) -> tuple[float, float, float]:
    """Greedy max-cosine matching; cosines are clamped to [0, 1] before averaging."""
    if not pred_emb.tokens or not ref_emb.tokens:
        raise EmptyEmbeddings("both sides need at least one token")
    if pred_emb.vectors.shape[1] != ref_emb.vectors.shape[1]:
        raise DimensionMismatch(
            f"dimensions differ: {pred_emb.vectors.shape[1]} vs {ref_emb.vectors.shape[1]}"
        )
    sim = np.clip(_unit_rows(pred_emb.vectors) @ _unit_rows(ref_emb.vectors).T, 0.0, 1.0)
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, min(f1, 1.0)


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class HashingTokenEmbedder:
    """Deterministic offline stand-in for a contextual token encoder.

    Each normalized token maps to a Gaussian vector seeded by its hash; a
    token's embedding mixes in its neighbours with weight ``context`` so
    that word order matters a little. Used by mock runs only.
    """

    name = "hashing"

    def __init__(self, dim: int = 64, context: float = 0.35):
        self.dim = dim
        self.context = context
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _base(self, token: str) -> np.ndarray:
        with self._lock:
            vec = self._cache.get(token)
            if vec is None:
                seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "big")
                vec = np.random.Generator(np.random.PCG64(seed)).standard_normal(self.dim)
                self._cache[token] = vec
            return vec

    def embed_tokens(self, text: str) -> TokenEmbeddings:
        tokens = normalize(text)
        if not tokens:
            return TokenEmbeddings((), np.zeros((0, self.dim)))
        base = np.stack([self._base(t) for t in tokens])
        mixed = base.copy()
        mixed[1:] += self.context * base[:-1]
        mixed[:-1] += self.context * base[1:]
        return TokenEmbeddings(tuple(tokens), mixed)


class SidecarTokenEmbedder:
    """Precomputed token embeddings: JSON ``{sha256(text): {"tokens": [...], "vectors": [[...]]}}``."""

    def __init__(self, path, name: str = "sidecar"):
        self.name = name
        self._table = json.loads(Path(path).read_text(encoding="utf-8"))

    def embed_tokens(self, text: str) -> TokenEmbeddings:
        entry = self._table.get(text_digest(text))
        if entry is None:
            raise KeyError(f"no sidecar embeddings for text digest {text_digest(text)[:12]}")
        return TokenEmbeddings(tuple(entry["tokens"]), np.asarray(entry["vectors"]))


class HTTPTokenEmbedder:
    """Token-embedding service.

    Request: ``POST {url}`` with ``{"model": ..., "text": ...}``.
    Response: ``{"tokens": [str, ...], "vectors": [[float, ...], ...]}``.
    """

    def __init__(self, url: str, model: str, timeout: float = 60.0, transport=None):
        import httpx

        self.url, self.name = url, model
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._cache: dict[str, TokenEmbeddings] = {}

    def embed_tokens(self, text: str) -> TokenEmbeddings:
        key = text_digest(text)
        if key not in self._cache:
            resp = self._client.post(self.url, json={"model": self.name, "text": text})
            if resp.status_code != 200:
                raise BackendError(f"token embedder HTTP {resp.status_code}", resp.status_code, 1)
            body = resp.json()
            self._cache[key] = TokenEmbeddings(tuple(body["tokens"]), np.asarray(body["vectors"]))
        return self._cache[key]


def bertscore(pred: str, ref: str, embedder) -> float:
    """BERTScore F1 of two texts; 0 when either side has no tokens (1 if both)."""
    pe, re_ = embedder.embed_tokens(pred), embedder.embed_tokens(ref)
    if not pe.tokens or not re_.tokens:
        return float(not pe.tokens and not re_.tokens)
    return bertscore_greedy(pe, re_)[2]


class HTTPSentenceEmbedder:
    """OpenAI-style ``/embeddings`` endpoint; vectors cached by (model, text digest)."""

    def __init__(self, base_url: str, model: str, api_key_env: str | None = None,
                 path: str = "/embeddings", timeout: float = 60.0, transport=None):
        import httpx

        self.model = model
        self.url = base_url.rstrip("/") + "/" + path.lstrip("/")
        self.api_key_env = api_key_env
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._cache: dict[tuple[str, str], np.ndarray] = {}

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        import os

        missing = [t for t in texts if (self.model, text_digest(t)) not in self._cache]
        if missing:
            headers = {}
            key = os.environ.get(self.api_key_env or "", "").strip()
            if key:
                headers["Authorization"] = f"Bearer {key}"
            resp = self._client.post(self.url, json={"model": self.model, "input": missing},
                                     headers=headers)
            if resp.status_code != 200:
                raise BackendError(f"embedder HTTP {resp.status_code}", resp.status_code, 1)
            for text, item in zip(missing, resp.json()["data"]):
                self._cache[(self.model, text_digest(text))] = np.asarray(item["embedding"], float)
        return [self._cache[(self.model, text_digest(t))] for t in texts]


def embed_cosine(pred: str, ref: str, embedder) -> float:
    if not pred.strip() or not ref.strip():
        raise EmptyText("embed_cosine needs two non-empty texts")
    a, b = embedder.embed([pred, ref])
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), 0.0, 1.0))


def score_all(pred: str, ref: str, metrics: Sequence[str], token_embedder=None,
              sentence_embedder=None) -> dict[str, float]:
    """Every requested metric that can be computed; semantic ones need an embedder."""
    out = {}
    for m in metrics:
        if m == "em":
            out[m] = float(exact_match(pred, ref))
        elif m == "f1":
            out[m] = token_f1(pred, ref)
        elif m in ("rouge1", "rouge2", "rougeL"):
            out[m] = rouge(pred, ref, m[-1])
        elif m == "bertscore_f1":
            if token_embedder is not None:
                out[m] = bertscore(pred, ref, token_embedder)
        elif m == "embed_cosine":
            if sentence_embedder is not None:
                out[m] = embed_cosine(pred, ref, sentence_embedder) if pred.strip() else 0.0
        else:
            raise ValueError(f"unknown metric {m!r}")
    return out
