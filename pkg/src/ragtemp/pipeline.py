"""Condition expansion and resumable orchestration.

Output directory layout (every stage persists its result, so stages can be
re-run on their own)::

    sample.json            selected samples, HotpotQA layout
    perturbed.jsonl        one PerturbedSample per (sample, perturbation)
    references.json        sentence-form reference per sample
    records.jsonl          append-only log: one line per executed work item
    manifest.json          config digest + provenance, item statuses, artifact digests
    scores.csv             one row per (work item, metric)
    run_stats.csv          per-sample mean/std/cv per condition and metric
    condition_stats.csv    per-condition aggregates per metric
    fragile.csv            largest Original-vs-perturbed gap per cell
    figures/*.svg
    artifacts.json         sha256 of every artifact above except records.jsonl
    cache/                 generation cache (unless cache_dir is set)

``records.jsonl`` is excluded from digests because its line order follows
completion order under concurrency; everything derived from it is sorted.
"""
from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from ._rng import derive_seed
from .config import RunConfig
from .dataset import FACT_COUNTS, QASample, SamplePlan, dump_dataset, load_dataset, sort_key, stratified_sample
from .errors import (
    DatasetError,
    InvalidConfig,
    ManifestMismatch,
    NoComparablePairs,
    NoIrrelevantSentence,
    RagTempError,
)
from .llm import GenerationRequest, HTTPBackend, MockBackend, ResponseCache, build_rag_prompt, generate
from .metrics import (
    HashingTokenEmbedder,
    HTTPSentenceEmbedder,
    HTTPTokenEmbedder,
    ScoreRecord,
    SidecarTokenEmbedder,
    score_all,
)
from .perturb import (
    PerturbationKind,
    PerturbedSample,
    apply_perturbation,
    default_lexicon,
    load_lexicon,
    sentence_replacement,
)
from .refproc import ReferenceAnswer, load_overrides, process_references
from .report import (
    FigureSpec,
    emit_condition_stats_csv,
    emit_run_stats_csv,
    emit_scores_csv,
    file_digest,
    render_figure,
    write_artifact_manifest,
)
from .stats import ConditionKey, aggregate_all, fragile_samples, group_run_stats

logger = logging.getLogger(__name__)

PENDING, DONE, FAILED = "pending", "done", "failed"
_LEXICAL_KINDS = {
    PerturbationKind.RandomNoiseInjection.value,
    PerturbationKind.SynonymReplacement.value,
    PerturbationKind.AntonymReplacement.value,
}


@dataclass(frozen=True, order=True)
class WorkItem:
    model: str
    temperature: float
    perturbation: str
    sample_id: str
    run_index: int

    def to_list(self) -> list:
        return [self.sample_id, self.model, self.temperature, self.perturbation, self.run_index]

    @classmethod
    def from_list(cls, v) -> "WorkItem":
        return cls(model=v[1], temperature=float(v[2]), perturbation=v[3], sample_id=v[0], run_index=int(v[4]))


def expand_conditions(config: RunConfig, samples: Iterable[QASample] = ()) -> tuple[int, list[WorkItem]]:
    """Condition-group count and the ordered work-item list.

    Groups are models x temperatures x perturbations x question types; work
    items additionally range over samples and run indices.
    """
    if not config.models or not config.temperatures or not config.perturbations:
        raise InvalidConfig("empty model, temperature or perturbation axis")
    groups = (len(config.models) * len(config.temperatures) * len(config.perturbations)
              * len(config.question_types))
    ids = sorted(s.id for s in samples)
    items = [
        WorkItem(m.name, t, p, sid, r)
        for m in config.models
        for t in config.temperatures
        for p in config.perturbations
        for sid in ids
        for r in range(config.runs_per_condition)
    ]
    return groups, items


@dataclass
class RunManifest:
    path: Path
    config_digest: str
    statuses: dict[WorkItem, str]
    artifacts: dict[str, str] = field(default_factory=dict)
    absent_metrics: tuple[str, ...] = ()
    fresh_calls: int = 0  # not persisted

    def count(self, status: str) -> int:
        return sum(1 for s in self.statuses.values() if s == status)

    @property
    def complete(self) -> bool:
        return self.count(PENDING) == 0

    def digest(self) -> str:
        return file_digest(self.path)

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        statuses = {WorkItem.from_list(v[:5]): v[5] for v in data["items"]}
        return cls(path, data["config_digest"], statuses, data.get("artifacts", {}),
                   tuple(data.get("absent_metrics", ())))


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


_FILES = {
    "sample_path": "sample.json", "perturbed_path": "perturbed.jsonl",
    "references_path": "references.json", "records_path": "records.jsonl",
    "manifest_path": "manifest.json", "scores_path": "scores.csv",
    "run_stats_path": "run_stats.csv", "condition_stats_path": "condition_stats.csv",
    "fragile_path": "fragile.csv", "artifacts_path": "artifacts.json",
}


class Workspace:
    """One run's output directory plus the objects needed to fill it."""

    def __init__(self, config: RunConfig, backends: Mapping[str, object] | None = None):
        self.config = config
        self.out = Path(config.out_dir)
        self.cache = ResponseCache(Path(config.cache_dir) if config.cache_dir else self.out / "cache")
        self._backend_overrides = dict(backends or {})
        self._backends: dict[str, object] = {}
        self._lock = threading.Lock()
        for attr, name in _FILES.items():
            setattr(self, attr, self.out / name)
        self.figures_dir = self.out / "figures"

    # ---------------------------------------------------------------- backends

    def backend(self, model_name: str, backend_name: str):
        if model_name in self._backend_overrides:
            return self._backend_overrides[model_name]
        key = "mock" if (self.config.mock or backend_name == "mock") else backend_name
        with self._lock:
            if key not in self._backends:
                spec = self.config.backends.get(backend_name)
                if key == "mock":
                    sharp = spec.sharpness if spec is not None else 4.0
                    self._backends[key] = MockBackend("mock", sharpness=sharp)
                else:
                    self._backends[key] = HTTPBackend(
                        backend_name, spec.base_url, spec.path, spec.timeout,
                        spec.max_attempts, spec.base_delay, spec.max_temperature,
                    )
            return self._backends[key]

    def model_backend(self, model: str):
        spec = next(m for m in self.config.models if m.name == model)
        return self.backend(spec.name, spec.backend)

    def token_embedder(self):
        conf = (self.config.scorer or {}).get("token_embedder")
        if not conf:
            return HashingTokenEmbedder() if self.config.mock else None
        kind = conf.get("kind", "http")
        if kind == "hashing":
            return HashingTokenEmbedder(int(conf.get("dim", 64)))
        if kind == "sidecar":
            return SidecarTokenEmbedder(conf["path"], conf.get("model", "sidecar"))
        if kind == "http":
            return HTTPTokenEmbedder(conf["url"], conf.get("model", "roberta-large"))
        raise InvalidConfig(f"unknown token embedder kind {kind!r}")

    def sentence_embedder(self):
        conf = (self.config.scorer or {}).get("sentence_embedder")
        if not conf:
            return None
        return HTTPSentenceEmbedder(conf["base_url"], conf["model"], conf.get("api_key_env"),
                                    conf.get("path", "/embeddings"))

    # ---------------------------------------------------------------- stage: sample

    def _eligible(self, s: QASample) -> bool:
        if (PerturbationKind.SentenceReplacement.value not in self.config.perturbations
                or self.config.on_empty != "error"):
            return True
        try:
            sentence_replacement(s, self.config.seed)
        except NoIrrelevantSentence:
            return False
        return True

    def select_samples(self) -> list[QASample]:
        if not self.config.dataset:
            raise DatasetError("no dataset configured")
        pool = [s for s in load_dataset(self.config.dataset, strict=self.config.strict)
                if s.fact_count in FACT_COUNTS]
        eligible = [s for s in pool if self._eligible(s)]
        if len(eligible) < len(pool):
            logger.warning("excluded %d sample(s) without a replacement candidate",
                           len(pool) - len(eligible))
        if self.config.per_cell is None:
            return sorted(eligible, key=sort_key)
        return stratified_sample(eligible, SamplePlan(self.config.per_cell, self.config.seed))

    def samples(self, refresh: bool = False) -> list[QASample]:
        if not refresh and self.sample_path.exists():
            return load_dataset(self.sample_path, strict=True)
        chosen = self.select_samples()
        self.out.mkdir(parents=True, exist_ok=True)
        dump_dataset(chosen, self.sample_path)
        return chosen

    # ---------------------------------------------------------------- stage: perturb

    def lexicon(self):
        if not _LEXICAL_KINDS & set(self.config.perturbations):
            return None
        return load_lexicon(self.config.lexicon) if self.config.lexicon else default_lexicon()

    def perturbations(self, samples=None, refresh: bool = False) -> dict[tuple[str, str], PerturbedSample]:
        if not refresh and self.perturbed_path.exists():
            out = {}
            for line in self.perturbed_path.read_text(encoding="utf-8").splitlines():
                ps = PerturbedSample.from_dict(json.loads(line))
                out[(ps.base, ps.kind.value)] = ps
            return out
        samples = self.samples() if samples is None else samples
        lexicon = self.lexicon()
        out = {}
        for s in samples:
            for kind in self.config.perturbations:
                out[(s.id, kind)] = apply_perturbation(
                    s, kind, self.config.seed, lexicon, self.config.prefix, on_empty=self.config.on_empty,
                )
        lines = [json.dumps(out[k].to_dict(), ensure_ascii=False, sort_keys=True) for k in sorted(out)]
        _atomic_write(self.perturbed_path, "".join(line + "\n" for line in lines))
        return out

    # ---------------------------------------------------------------- stage: refprep

    def references(self, samples=None, refresh: bool = False) -> dict[str, ReferenceAnswer]:
        if not refresh and self.references_path.exists():
            data = json.loads(self.references_path.read_text(encoding="utf-8"))
            return {k: ReferenceAnswer(k, v["text"], v["source"]) for k, v in data.items()}
        samples = self.samples() if samples is None else samples
        ref = self.config.reference
        overrides = load_overrides(ref["overrides"]) if ref.get("overrides") else None
        backend = self.backend("__reference__", ref.get("backend", "mock"))
        refs = process_references(
            samples, backend, ref.get("model", "reference"), self.cache,
            temperature=float(ref.get("temperature", 1.0)),
            seed=derive_seed(self.config.seed, "reference"),
            max_tokens=self.config.max_tokens, overrides=overrides,
        )
        table = {r.sample_id: {"text": r.text, "source": r.source} for r in refs}
        _atomic_write(self.references_path, json.dumps(table, indent=1, sort_keys=True, ensure_ascii=False) + "\n")
        return {r.sample_id: r for r in refs}

    # ---------------------------------------------------------------- stage: run

    def _execute(self, item: WorkItem, perturbed, refs, token_emb, sent_emb) -> dict:
        record = {"item": item.to_list()}
        try:
            ps = perturbed[(item.sample_id, item.perturbation)]
            request = GenerationRequest(
                item.model, build_rag_prompt(ps.query, ps.context), item.temperature,
                self.config.max_tokens, item.run_index, derive_seed(self.config.seed, item.model),
            )
            result = generate(request, self.model_backend(item.model), self.cache)
            scores = score_all(result.text, refs[item.sample_id].text, self.config.metrics,
                               token_emb, sent_emb)
        except Exception as exc:  # recorded per item; the run goes on
            logger.debug("work item %s failed", item, exc_info=True)
            record.update(status=FAILED, error=f"{type(exc).__name__}: {exc}")
            return record
        record.update(status=DONE, text=result.text, finish_reason=result.finish_reason,
                      attempts=result.attempts, from_cache=result.from_cache, scores=scores)
        return record

    def read_records(self) -> dict[WorkItem, dict]:
        records = {}
        if not self.records_path.exists():
            return records
        for line in self.records_path.read_text(encoding="utf-8").splitlines():
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                continue  # torn final line after a crash
            records[WorkItem.from_list(rec["item"])] = rec
        return records

    def execute(self, items: list[WorkItem], stop_after: int | None = None) -> int:
        """Run ``items``, appending one record per item; returns fresh backend calls."""
        samples = self.samples()
        perturbed = self.perturbations(samples)
        refs = self.references(samples)
        token_emb, sent_emb = self.token_embedder(), self.sentence_embedder()
        todo = items if stop_after is None else items[:stop_after]
        fresh = 0
        self.records_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.records_path, "a", encoding="utf-8") as log, \
                ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
            window = self.config.concurrency * 4
            pending = set()
            queue = iter(todo)
            while True:
                for item in queue:
                    pending.add(pool.submit(self._execute, item, perturbed, refs, token_emb, sent_emb))
                    if len(pending) >= window:
                        break
                if not pending:
                    break
                done, pending = wait(pending, return_when=FIRST_COMPLETED)
                for fut in done:
                    rec = fut.result()
                    fresh += rec.get("status") == DONE and not rec.get("from_cache")
                    log.write(json.dumps(rec, ensure_ascii=False) + "\n")
                log.flush()
        return fresh

    # ---------------------------------------------------------------- stage: score

    def score_records(self) -> list[ScoreRecord]:
        samples = {s.id: s for s in self.samples()}
        out = []
        for item, rec in sorted(self.read_records().items()):
            if rec["status"] != DONE:
                continue
            s = samples[item.sample_id]
            for metric, value in rec["scores"].items():
                out.append(ScoreRecord(item.sample_id, item.model, item.temperature, item.perturbation,
                                       s.question_type, s.fact_count, item.run_index, metric,
                                       min(max(value, 0.0), 1.0), bool(rec["from_cache"])))
        return out

    def write_scores(self) -> list[ScoreRecord]:
        records = self.score_records()
        emit_scores_csv(records, self.scores_path)
        return records

    # ---------------------------------------------------------------- stage: stats

    def stats(self, records=None):
        records = self.score_records() if records is None else records
        by_metric: dict[str, list] = {}
        for r in records:
            key = ConditionKey(r.model, r.temperature, r.perturbation, r.question_type)
            by_metric.setdefault(r.metric, []).append((key, r.sample_id, r.value))
        run_stats = {m: group_run_stats(rows) for m, rows in by_metric.items()}
        cond_stats = {m: aggregate_all(rs) for m, rs in run_stats.items()}
        return run_stats, cond_stats

    def write_stats(self, records=None):
        run_stats, cond_stats = self.stats(records)
        emit_run_stats_csv(run_stats, self.run_stats_path)
        emit_condition_stats_csv(cond_stats, self.condition_stats_path)
        return run_stats, cond_stats

    def headline_metric(self, available) -> str | None:
        if self.config.headline_metric in available:
            return self.config.headline_metric
        for m in ("rougeL", "rouge1", "f1", "em"):
            if m in available:
                return m
        return None

    # ---------------------------------------------------------------- stage: report / fragile

    def write_figures(self, run_stats, cond_stats) -> list[Path]:
        metric = self.headline_metric([m for m, c in cond_stats.items() if c])
        if metric is None:
            logger.warning("no condition statistics (runs_per_condition < 2?); no figures drawn")
            return []
        label = {"bertscore_f1": "BERTScore F1", "rougeL": "ROUGE-L F1", "rouge1": "ROUGE-1 F1",
                 "rouge2": "ROUGE-2 F1", "f1": "token F1", "em": "exact match",
                 "embed_cosine": "embedding cosine"}[metric]
        grid = sorted({c.key.temperature for c in cond_stats[metric]})
        box_t = tuple(t for t in self.config.figure_temperatures if t in grid) or (grid[0], grid[-1])
        box_t = tuple(dict.fromkeys(box_t))
        gaps = any(rec["status"] != DONE for rec in self.read_records().values())
        paths = []
        for qt in self.config.question_types:
            cs = [c for c in cond_stats[metric] if c.key.question_type == qt]
            rs = [s for s in run_stats[metric] if s.key.question_type == qt]
            if not cs:
                continue
            models = tuple(m.name for m in self.config.models if any(c.key.model == m.name for c in cs))
            for kind in ("temperature_trend", "cv_trend"):
                spec = FigureSpec(kind, self.figures_dir / f"{kind}_{qt}.svg", qt,
                                  metric_label=label, allow_gaps=gaps, models=models)
                paths.append(render_figure(spec, condition_stats=cs))
            spec = FigureSpec("score_boxplot", self.figures_dir / f"score_boxplot_{qt}.svg", qt,
                              temperatures=box_t, metric_label=label, allow_gaps=True, models=models)
            paths.append(render_figure(spec, run_stats=rs))
        return paths

    def write_fragile(self, run_stats) -> int:
        import csv

        metric = self.headline_metric([m for m, r in run_stats.items() if r])
        rows = []
        if metric is not None:
            texts = {(i.sample_id, i.model, i.temperature, i.perturbation): r.get("text", "")
                     for i, r in self.read_records().items() if i.run_index == 0}
            for m in self.config.models:
                for t in self.config.temperatures:
                    for qt in self.config.question_types:
                        for p in self.config.perturbations:
                            if p == PerturbationKind.Original.value:
                                continue
                            try:
                                sid, gap = fragile_samples(run_stats[metric], m.name, t, qt, p)
                            except NoComparablePairs:
                                continue
                            rows.append((m.name, repr(t), qt, p, metric, sid, f"{gap:.6f}",
                                         texts.get((sid, m.name, t, PerturbationKind.Original.value), ""),
                                         texts.get((sid, m.name, t, p), "")))
        self.fragile_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.fragile_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("model", "temperature", "question_type", "perturbation", "metric",
                             "sample_id", "gap", "original_text_run0", "perturbed_text_run0"))
            writer.writerows(rows)
        return len(rows)

    def artifact_paths(self) -> list[Path]:
        paths = [self.sample_path, self.perturbed_path, self.references_path, self.scores_path,
                 self.run_stats_path, self.condition_stats_path, self.fragile_path]
        if self.figures_dir.exists():
            paths += sorted(self.figures_dir.glob("*.svg"))
        return [p for p in paths if p.exists()]

    def finalize(self) -> dict[str, str]:
        """Derive every downstream artifact from records.jsonl."""
        records = self.write_scores()
        run_stats, cond_stats = self.write_stats(records)
        self.write_fragile(run_stats)
        self.write_figures(run_stats, cond_stats)
        return write_artifact_manifest(self.artifact_paths(), self.artifacts_path, root=self.out)

    # ---------------------------------------------------------------- manifest

    def absent_metrics(self) -> tuple[str, ...]:
        absent = []
        if "bertscore_f1" in self.config.metrics and self.token_embedder() is None:
            absent.append("bertscore_f1")
        if "embed_cosine" in self.config.metrics and self.sentence_embedder() is None:
            absent.append("embed_cosine")
        return tuple(absent)

    def write_manifest(self, items: list[WorkItem], artifacts: dict[str, str]) -> RunManifest:
        records = self.read_records()
        statuses = {i: records[i]["status"] if i in records else PENDING for i in items}
        absent = self.absent_metrics()
        data = {
            "config_digest": self.config.digest(),
            "config": self.config.provenance(),
            "counts": {s: sum(1 for v in statuses.values() if v == s) for s in (PENDING, DONE, FAILED)},
            "absent_metrics": list(absent),
            "items": [i.to_list() + [statuses[i]] for i in items],
            "artifacts": artifacts,
        }
        _atomic_write(self.manifest_path, json.dumps(data, sort_keys=True, ensure_ascii=False) + "\n")
        return RunManifest(self.manifest_path, data["config_digest"], statuses, artifacts, absent)

    def _run(self, items: list[WorkItem], all_items: list[WorkItem], stop_after) -> RunManifest:
        try:
            fresh = self.execute(items, stop_after)
        finally:
            self.write_manifest(all_items, {})
        records = self.read_records()
        artifacts = {}
        if all(i in records for i in all_items):
            artifacts = self.finalize()
        manifest = self.write_manifest(all_items, artifacts)
        manifest.fresh_calls = fresh
        return manifest


def run_benchmark(config: RunConfig, backends: Mapping[str, object] | None = None,
                  stop_after: int | None = None) -> RunManifest:
    """Execute every work item of ``config`` from scratch (the generation cache is kept).

    ``stop_after`` ends the run early after that many items, leaving the rest
    pending, which is how an interruption is simulated.
    """
    ws = Workspace(config, backends)
    ws.out.mkdir(parents=True, exist_ok=True)
    samples = ws.samples(refresh=True)
    ws.perturbations(samples, refresh=True)
    ws.references(samples, refresh=True)
    _, items = expand_conditions(config, samples)
    if ws.records_path.exists():
        ws.records_path.unlink()
    return ws._run(items, items, stop_after)


def resume(manifest_path, config: RunConfig, backends: Mapping[str, object] | None = None,
           stop_after: int | None = None) -> RunManifest:
    """Re-run only the pending and failed items of an earlier run."""
    manifest = RunManifest.load(manifest_path)
    if manifest.config_digest != config.digest():
        raise ManifestMismatch(
            f"manifest digest {manifest.config_digest[:12]} != config digest {config.digest()[:12]}"
        )
    config = config.replace(out_dir=str(Path(manifest_path).parent))
    ws = Workspace(config, backends)
    items = list(manifest.statuses)
    todo = [i for i, s in manifest.statuses.items() if s != DONE]
    if not todo and manifest.artifacts:
        return manifest
    return ws._run(todo, items, stop_after)
