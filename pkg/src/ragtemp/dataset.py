"""Loading, validation and stratified sampling of HotpotQA-format records.

A HotpotQA record looks like::

    {"_id": "5a8b57f25542995d1e6f1371",
     "question": "...", "answer": "yes", "type": "comparison",
     "supporting_facts": [["Title A", 0], ["Title B", 2]],
     "context": [["Title A", ["s0", "s1"]], ["Title B", ["s0", "s1", "s2"]]]}

Either ``_id`` (as in the official dumps) or ``id`` is accepted.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._rng import derive_seed
from .errors import InsufficientCell, ParseError, SchemaError

logger = logging.getLogger(__name__)

QUESTION_TYPES = ("bridge", "comparison")
FACT_COUNTS = (2, 3, 4)


@dataclass(frozen=True)
class Document:
    title: str
    sentences: tuple[str, ...] = ()

    @property
    def degenerate(self) -> bool:
        return not self.sentences


@dataclass(frozen=True)
class QASample:
    id: str
    question: str
    gold_answer: str
    question_type: str
    context: tuple[Document, ...]
    supporting_facts: tuple[tuple[str, int], ...]

    @property
    def fact_count(self) -> int:
        return len(self.supporting_facts)

    def document(self, title: str) -> Document:
        for doc in self.context:
            if doc.title == title:
                return doc
        raise KeyError(title)

    def to_record(self) -> dict:
        """Serialize back to the HotpotQA record layout."""
        return {
            "_id": self.id,
            "question": self.question,
            "answer": self.gold_answer,
            "type": self.question_type,
            "supporting_facts": [[t, i] for t, i in self.supporting_facts],
            "context": [[d.title, list(d.sentences)] for d in self.context],
        }


@dataclass(frozen=True)
class SamplePlan:
    per_cell: int
    seed: int = 0
    cells: tuple[tuple[int, str], ...] = field(
        default=tuple((n, t) for n in FACT_COUNTS for t in QUESTION_TYPES)
    )

    def __post_init__(self):
        if self.per_cell < 0:
            raise ValueError("per_cell must be >= 0")


def validate_sample(sample: QASample) -> None:
    """Raise SchemaError when ``sample`` breaks a QASample invariant."""
    if sample.question_type not in QUESTION_TYPES:
        raise SchemaError(f"unknown question type {sample.question_type!r}", sample.id)
    titles = set()
    for doc in sample.context:
        if not doc.title:
            raise SchemaError("document with empty title", sample.id)
        if doc.title in titles:
            raise SchemaError(f"duplicate context title {doc.title!r}", sample.id)
        titles.add(doc.title)
    for title, index in sample.supporting_facts:
        if title not in titles:
            raise SchemaError(f"supporting fact names absent title {title!r}", sample.id)
        n = len(sample.document(title).sentences)
        if not 0 <= index < n:
            raise SchemaError(
                f"supporting fact ({title!r}, {index}) out of range for {n} sentences",
                sample.id,
            )


def _expect(cond, message, index):
    if not cond:
        raise ParseError(message, index)


def parse_record(record, index: int = 0) -> QASample:
    """Build a QASample from one raw record, checking structure only.

    Structural problems raise ParseError; semantic checks live in
    :func:`validate_sample`.
    """
    _expect(isinstance(record, dict), "record is not an object", index)
    rid = record.get("_id", record.get("id"))
    _expect(isinstance(rid, str) and rid, "missing id", index)
    for key in ("question", "answer", "type"):
        _expect(isinstance(record.get(key), str), f"field {key!r} missing or not text", index)
    facts = record.get("supporting_facts")
    _expect(isinstance(facts, list), "supporting_facts is not a list", index)
    parsed_facts = []
    for fact in facts:
        _expect(
            isinstance(fact, (list, tuple))
            and len(fact) == 2
            and isinstance(fact[0], str)
            and isinstance(fact[1], int)
            and not isinstance(fact[1], bool),
            f"malformed supporting fact {fact!r}",
            index,
        )
        parsed_facts.append((fact[0], fact[1]))
    context = record.get("context")
    _expect(isinstance(context, list), "context is not a list", index)
    docs = []
    for entry in context:
        _expect(
            isinstance(entry, (list, tuple)) and len(entry) == 2 and isinstance(entry[0], str),
            f"malformed context entry {str(entry)[:60]!r}",
            index,
        )
        sents = entry[1]
        _expect(
            isinstance(sents, list) and all(isinstance(s, str) for s in sents),
            f"sentences of {entry[0]!r} are not a list of text",
            index,
        )
        docs.append(Document(entry[0], tuple(sents)))
    return QASample(
        id=rid,
        question=record["question"],
        gold_answer=record["answer"],
        question_type=record["type"],
        context=tuple(docs),
        supporting_facts=tuple(parsed_facts),
    )


def parse_records(records: Sequence, strict: bool = False) -> tuple[list[QASample], list[SchemaError]]:
    """Parse and validate raw records.

    Returns the valid samples and the schema errors of rejected records.
    With ``strict`` the first schema error is raised instead.
    """
    samples, rejected, seen = [], [], set()
    for index, record in enumerate(records):
        sample = parse_record(record, index)
        try:
            validate_sample(sample)
            if sample.id in seen:
                raise SchemaError("duplicate id", sample.id)
        except SchemaError as exc:
            if strict:
                raise
            rejected.append(exc)
            continue
        seen.add(sample.id)
        samples.append(sample)
    return samples, rejected


def load_dataset(path, strict: bool = False) -> list[QASample]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        records = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(records, list):
        raise ParseError(f"{path}: top level is not an array")
    samples, rejected = parse_records(records, strict=strict)
    if rejected:
        logger.warning("skipped %d invalid record(s) in %s; first: %s", len(rejected), path, rejected[0])
    return samples


def dump_dataset(samples: Iterable[QASample], path) -> None:
    Path(path).write_text(
        json.dumps([s.to_record() for s in samples], ensure_ascii=False, indent=1),
        encoding="utf-8",
    )


def sort_key(sample: QASample):
    return (sample.fact_count, sample.question_type, sample.id)


def stratified_sample(samples: Sequence[QASample], plan: SamplePlan) -> list[QASample]:
    """Draw ``plan.per_cell`` samples from every (fact_count, question_type) cell.

    The draw depends only on the set of ids in each cell and the seed: ids
    are sorted before a seeded permutation is applied, so input order does
    not matter. Samples outside the plan's cells are ignored.
    """
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids are not unique")
    by_cell: dict[tuple[int, str], list[QASample]] = {cell: [] for cell in plan.cells}
    for s in samples:
        cell = (s.fact_count, s.question_type)
        if cell in by_cell:
            by_cell[cell].append(s)

    chosen = []
    for cell in plan.cells:
        pool = sorted(by_cell[cell], key=lambda s: s.id)
        if len(pool) < plan.per_cell:
            raise InsufficientCell(cell, len(pool), plan.per_cell)
        if plan.per_cell == 0:
            continue
        rng = np.random.Generator(np.random.PCG64(derive_seed("stratified", plan.seed, cell)))
        picks = rng.permutation(len(pool))[: plan.per_cell]
        chosen.extend(pool[i] for i in picks)
    return sorted(chosen, key=sort_key)


def supporting_sentences(sample: QASample) -> list[tuple[str, int, str]]:
    return [
        (title, index, sample.document(title).sentences[index])
        for title, index in sample.supporting_facts
    ]
