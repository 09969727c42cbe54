"""Run configuration: schema, defaults, loading and digest.

A config file is YAML or JSON. Every key is optional; omitted keys take
the defaults below, which reproduce the five-model, eleven-temperature,
four-condition grid. Example::

    dataset: data/hotpot_train_v1.1.json
    per_cell: 100
    seed: 13
    models:
      - {name: gpt-4o, backend: openai}
      - {name: meta-llama/Llama-3.2-1B-Instruct, backend: llama}
    backends:
      openai: {base_url: "https://api.openai.com/v1"}
      llama: {base_url: "http://localhost:8000/v1", max_attempts: 3}
    temperatures: [0.0, 0.6, 1.4, 2.0]
    metrics: [f1, rouge1, rouge2, rougeL, bertscore_f1]
    scorer:
      token_embedder: {kind: http, url: "http://localhost:9000/embed_tokens", model: roberta-large}

A backend named ``mock`` (or the ``mock: true`` switch) uses the offline
mock language model.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ._rng import RNG_ALGORITHM
from .dataset import QUESTION_TYPES
from .errors import InvalidConfig
from .llm import DEFAULT_MAX_TOKENS, MAX_TEMPERATURE
from .metrics import METRICS
from .perturb import CORE_KINDS, PerturbationKind

DEFAULT_TEMPERATURES = tuple(round(0.2 * i, 10) for i in range(11))
DEFAULT_PERTURBATIONS = (PerturbationKind.Original.value,) + tuple(k.value for k in CORE_KINDS)
DEFAULT_METRICS = ("em", "f1", "rouge1", "rouge2", "rougeL", "bertscore_f1")

# Not part of the digest: changing them does not change what is computed.
OPERATIONAL_FIELDS = ("out_dir", "cache_dir", "concurrency")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    backend: str


@dataclass(frozen=True)
class BackendSpec:
    base_url: str = ""
    path: str = "/chat/completions"
    timeout: float = 120.0
    max_attempts: int = 5
    base_delay: float = 1.0
    max_temperature: float = MAX_TEMPERATURE
    sharpness: float = 4.0  # mock only


DEFAULT_MODELS = (
    ModelSpec("gpt-3.5-turbo", "openai"),
    ModelSpec("gpt-4o", "openai"),
    ModelSpec("meta-llama/Llama-3.1-8B-Instruct", "llama"),
    ModelSpec("meta-llama/Llama-3.2-1B-Instruct", "llama"),
    ModelSpec("deepseek-reasoner", "deepseek"),
)


def _default_backends():
    return {
        "openai": BackendSpec("https://api.openai.com/v1"),
        "deepseek": BackendSpec("https://api.deepseek.com"),
        "llama": BackendSpec("http://localhost:8000/v1"),
    }


@dataclass(frozen=True)
class RunConfig:
    dataset: str | None = None
    per_cell: int | None = None
    seed: int = 0
    models: tuple[ModelSpec, ...] = DEFAULT_MODELS
    backends: dict = field(default_factory=_default_backends)
    temperatures: tuple[float, ...] = DEFAULT_TEMPERATURES
    perturbations: tuple[str, ...] = DEFAULT_PERTURBATIONS
    runs_per_condition: int = 3
    max_tokens: int = DEFAULT_MAX_TOKENS
    metrics: tuple[str, ...] = DEFAULT_METRICS
    headline_metric: str = "bertscore_f1"
    scorer: dict = field(default_factory=dict)
    reference: dict = field(default_factory=lambda: {
        "model": "gpt-4o", "backend": "openai", "temperature": 1.0, "overrides": None,
    })
    lexicon: str | None = None
    prefix: str | None = None
    on_empty: str = "error"
    figure_temperatures: tuple[float, ...] = (0.6, 2.0)
    strict: bool = False
    mock: bool = False
    concurrency: int = 4
    cache_dir: str | None = None
    out_dir: str = "runs/default"

    def __post_init__(self):
        object.__setattr__(self, "temperatures", tuple(float(t) for t in self.temperatures))
        object.__setattr__(self, "figure_temperatures", tuple(float(t) for t in self.figure_temperatures))
        object.__setattr__(self, "perturbations", tuple(
            p.value if isinstance(p, PerturbationKind) else str(p) for p in self.perturbations))
        object.__setattr__(self, "metrics", tuple(self.metrics))
        self.validate()

    def validate(self) -> None:
        def bad(msg):
            raise InvalidConfig(msg)

        if not self.models:
            bad("at least one model is required")
        if not self.metrics:
            bad("at least one metric is required")
        for m in self.metrics:
            if m not in METRICS:
                bad(f"unknown metric {m!r}")
        if not self.temperatures:
            bad("temperature grid is empty")
        if len(set(self.temperatures)) != len(self.temperatures):
            bad("duplicate temperatures")
        for t in self.temperatures:
            if not 0.0 <= t <= MAX_TEMPERATURE:
                bad(f"temperature {t} outside [0, {MAX_TEMPERATURE}]")
        if not self.perturbations:
            bad("at least one perturbation is required")
        for p in self.perturbations:
            if p not in PerturbationKind._value2member_map_:
                bad(f"unknown perturbation {p!r}")
        if len(set(self.perturbations)) != len(self.perturbations):
            bad("duplicate perturbations")
        if PerturbationKind.PrefixInjection.value in self.perturbations and not self.prefix:
            bad("PrefixInjection needs a prefix")
        if self.runs_per_condition < 1:
            bad("runs_per_condition must be >= 1")
        if self.max_tokens < 1:
            bad("max_tokens must be >= 1")
        if self.per_cell is not None and self.per_cell < 0:
            bad("per_cell must be >= 0")
        if self.concurrency < 1:
            bad("concurrency must be >= 1")
        if self.on_empty not in ("error", "degrade-to-removal"):
            bad(f"unknown on_empty policy {self.on_empty!r}")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            bad("duplicate model names")
        if not self.mock:
            for m in self.models:
                if m.backend != "mock" and m.backend not in self.backends:
                    bad(f"model {m.name!r} uses undefined backend {m.backend!r}")
            ref_backend = self.reference.get("backend")
            if ref_backend != "mock" and ref_backend not in self.backends:
                bad(f"reference model uses undefined backend {ref_backend!r}")

    # ------------------------------------------------------------------ io

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["models"] = [dataclasses.asdict(m) for m in self.models]
        d["backends"] = {k: dataclasses.asdict(v) for k, v in sorted(self.backends.items())}
        for key in ("temperatures", "perturbations", "metrics", "figure_temperatures"):
            d[key] = list(d[key])
        return d

    def provenance(self) -> dict:
        """Everything that determines results, with defaults filled in."""
        d = self.to_dict()
        for key in OPERATIONAL_FIELDS:
            d.pop(key)
        d["rng"] = RNG_ALGORITHM
        return d

    def digest(self) -> str:
        payload = json.dumps(self.provenance(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        try:
            if "models" in data:
                data["models"] = tuple(
                    ModelSpec(**m) if isinstance(m, dict) else ModelSpec(str(m), "openai")
                    for m in data["models"]
                )
            if "backends" in data:
                data["backends"] = {k: BackendSpec(**(v or {})) for k, v in data["backends"].items()}
            if "reference" in data:
                ref = cls.__dataclass_fields__["reference"].default_factory()
                ref.update(data["reference"] or {})
                data["reference"] = ref
            for key in ("temperatures", "perturbations", "metrics", "figure_temperatures"):
                if key in data:
                    data[key] = tuple(data[key])
            return cls(**data)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @property
    def question_types(self) -> tuple[str, ...]:
        return QUESTION_TYPES


def load_config(path=None, **overrides) -> RunConfig:
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise InvalidConfig(f"config file {path} not found")
        text = path.read_text(encoding="utf-8")
        if path.suffix in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
        if not isinstance(data, dict):
            raise InvalidConfig("config file must hold a mapping")
        base = path.parent
        for key in ("dataset", "lexicon"):
            if data.get(key) and not Path(data[key]).is_absolute():
                data[key] = str(base / data[key])
        ref = data.get("reference") or {}
        if ref.get("overrides") and not Path(ref["overrides"]).is_absolute():
            ref["overrides"] = str(base / ref["overrides"])
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(data)
