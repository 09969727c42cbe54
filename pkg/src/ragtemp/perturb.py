"""Context and query perturbations with a replayable edit log.

Every operator is a pure function of its inputs. Edits are expressed in
the coordinates of the *original* sample (document title, original
sentence index, character span inside the original sentence), so
``replay_edits(sample, perturbed.edits)`` rebuilds the perturbed context
from the untouched sample.

Targets for sentence-level work are the "latter" supporting facts: walking
the supporting-fact list from the end and collecting
``perturb_count(fact_count)`` distinct (title, index) pointers.
"""
from __future__ import annotations

import enum
import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from ._rng import make_rng
from .dataset import Document, QASample
from .errors import (
    EmptyLexiconHit,
    InvalidFactCount,
    MissingLexicon,
    MissingPrefix,
    NoIrrelevantSentence,
)

MASK = "[MASK]"
TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class PerturbationKind(str, enum.Enum):
    Original = "Original"
    SentenceReplacement = "SentenceReplacement"
    SentenceRemoval = "SentenceRemoval"
    NerReplacement = "NerReplacement"
    WordReordering = "WordReordering"
    SourceReordering = "SourceReordering"
    RandomNoiseInjection = "RandomNoiseInjection"
    SynonymReplacement = "SynonymReplacement"
    AntonymReplacement = "AntonymReplacement"
    PrefixInjection = "PrefixInjection"

    def __str__(self):
        return self.value


CORE_KINDS = (
    PerturbationKind.SentenceReplacement,
    PerturbationKind.SentenceRemoval,
    PerturbationKind.NerReplacement,
)


@dataclass(frozen=True)
class Edit:
    """One atomic change.

    ``op`` is one of:

    * ``remove``  - drop sentence ``index`` of ``title``; ``after`` is None
    * ``replace`` - swap the whole sentence for ``after``
    * ``span``    - replace ``before`` at char ``span`` of the sentence with
      ``after``; zero-width spans are insertions
    * ``unmatched`` - no-op marker for a target where nothing applied
    * ``move``    - document ``title`` moved; ``span`` holds (old, new) position
    * ``prefix``  - query rewritten from ``before`` to ``after``
    """

    op: str
    kind: PerturbationKind
    title: str = ""
    index: int | None = None
    span: tuple[int, int] | None = None
    before: str = ""
    after: str | None = None
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "op": self.op, "kind": self.kind.value, "title": self.title, "index": self.index,
            "span": list(self.span) if self.span is not None else None,
            "before": self.before, "after": self.after, "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d) -> "Edit":
        return cls(
            op=d["op"], kind=PerturbationKind(d["kind"]), title=d["title"], index=d["index"],
            span=tuple(d["span"]) if d["span"] is not None else None,
            before=d["before"], after=d["after"], flags=tuple(d["flags"]),
        )


@dataclass(frozen=True)
class PerturbedSample:
    base: str
    kind: PerturbationKind
    context: tuple[Document, ...]
    query: str
    edits: tuple[Edit, ...]
    seed: int

    @property
    def flags(self) -> set[str]:
        return {f for e in self.edits for f in e.flags}

    @property
    def sentence_targets(self) -> list[tuple[str, int]]:
        """Distinct (title, index) pairs touched at sentence level, in log order."""
        seen = []
        for e in self.edits:
            if e.index is not None and (e.title, e.index) not in seen:
                seen.append((e.title, e.index))
        return seen

    def to_dict(self) -> dict:
        return {
            "base": self.base, "kind": self.kind.value, "seed": self.seed, "query": self.query,
            "context": [[d.title, list(d.sentences)] for d in self.context],
            "edits": [e.to_dict() for e in self.edits],
        }

    @classmethod
    def from_dict(cls, d) -> "PerturbedSample":
        return cls(
            base=d["base"], kind=PerturbationKind(d["kind"]), seed=d["seed"], query=d["query"],
            context=tuple(Document(t, tuple(s)) for t, s in d["context"]),
            edits=tuple(Edit.from_dict(e) for e in d["edits"]),
        )


@dataclass(frozen=True)
class Lexicon:
    synonyms: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    antonyms: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    noise: tuple[str, ...] = ()

    def __post_init__(self):
        for table in (self.synonyms, self.antonyms):
            for word, options in table.items():
                if not options:
                    raise ValueError(f"empty lexicon entry for {word!r}")
        object.__setattr__(self, "synonyms", {k.lower(): tuple(v) for k, v in self.synonyms.items()})
        object.__setattr__(self, "antonyms", {k.lower(): tuple(v) for k, v in self.antonyms.items()})
        object.__setattr__(self, "noise", tuple(self.noise))

    def lookup(self, word: str, table: str) -> tuple[str, ...]:
        return getattr(self, table).get(word.lower(), ())

    @classmethod
    def from_mapping(cls, data: Mapping) -> "Lexicon":
        """Build from ``{"words": {w: {"synonyms": [...], "antonyms": [...]}}, "noise": [...]}``."""
        words = data.get("words", {})
        syn = {w: e["synonyms"] for w, e in words.items() if e.get("synonyms")}
        ant = {w: e["antonyms"] for w, e in words.items() if e.get("antonyms")}
        return cls(syn, ant, tuple(data.get("noise", ())))


def load_lexicon(path) -> Lexicon:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    return Lexicon.from_mapping(data)


def default_lexicon() -> Lexicon:
    """A small English lexicon bundled with the package."""
    from importlib.resources import files

    return Lexicon.from_mapping(json.loads(files(__package__).joinpath("data/lexicon.json").read_text()))


def perturb_count(fact_count: int) -> int:
    """Number of supporting sentences to alter: 2->1, 3->1, 4->2, n>4 -> n // 2."""
    if fact_count < 2:
        raise InvalidFactCount(f"fact_count must be >= 2, got {fact_count}")
    return fact_count // 2


def target_facts(sample: QASample) -> list[tuple[str, int]]:
    """The latter ``perturb_count`` distinct supporting facts, in listing order."""
    k = perturb_count(sample.fact_count)
    picked: list[tuple[str, int]] = []
    for fact in reversed(sample.supporting_facts):
        if fact not in picked:
            picked.append(fact)
        if len(picked) == k:
            break
    return picked[::-1]


def tokenize(text: str) -> list[tuple[str, int, int]]:
    """Word and punctuation tokens with their character offsets."""
    return [(m.group(), m.start(), m.end()) for m in TOKEN_RE.finditer(text)]


def _apply_spans(sentence: str, spans: Sequence[Edit]) -> str:
    out = sentence
    for e in sorted(spans, key=lambda e: e.span[0], reverse=True):
        start, end = e.span
        if out[start:end] != e.before:
            raise ValueError(f"edit log does not match sentence at {e.span}")
        out = out[:start] + e.after + out[end:]
    return out


def replay_edits(sample: QASample, edits: Sequence[Edit]) -> tuple[tuple[Document, ...], str]:
    """Rebuild (context, query) by applying ``edits`` to the original sample."""
    per_sentence: dict[tuple[str, int], list[Edit]] = {}
    moves: dict[str, int] = {}
    query = sample.question
    for e in edits:
        if e.op in ("remove", "replace", "span"):
            per_sentence.setdefault((e.title, e.index), []).append(e)
        elif e.op == "move":
            moves[e.title] = e.span[1]
        elif e.op == "prefix":
            if query != e.before:
                raise ValueError("prefix edit does not match query")
            query = e.after
        elif e.op != "unmatched":
            raise ValueError(f"unknown edit op {e.op!r}")

    docs = []
    for doc in sample.context:
        sentences = []
        for i, sent in enumerate(doc.sentences):
            todo = per_sentence.get((doc.title, i), [])
            ops = {e.op for e in todo}
            if "remove" in ops:
                continue
            if "replace" in ops:
                (rep,) = [e for e in todo if e.op == "replace"]
                if rep.before != sent:
                    raise ValueError(f"replace edit does not match {doc.title!r}[{i}]")
                sent = rep.after
            spans = [e for e in todo if e.op == "span"]
            if spans:
                sent = _apply_spans(sent, spans)
            sentences.append(sent)
        docs.append(Document(doc.title, tuple(sentences)))

    if moves:
        order: list[Document | None] = [None] * len(docs)
        for doc in docs:
            if doc.title in moves:
                order[moves[doc.title]] = doc
        for pos, doc in enumerate(docs):
            if doc.title not in moves:
                order[pos] = doc
        docs = order
    return tuple(docs), query


def _finish(sample, kind, seed, edits, query=None) -> PerturbedSample:
    edits = tuple(edits)
    context, new_query = replay_edits(sample, edits)
    return PerturbedSample(
        base=sample.id, kind=kind, context=context,
        query=new_query if query is None else query, edits=edits, seed=seed,
    )


def original(sample: QASample, seed: int = 0) -> PerturbedSample:
    return PerturbedSample(sample.id, PerturbationKind.Original, sample.context,
                           sample.question, (), seed)


def sentence_removal(sample: QASample, seed: int = 0) -> PerturbedSample:
    kind = PerturbationKind.SentenceRemoval
    edits = [
        Edit("remove", kind, title, index, before=sample.document(title).sentences[index])
        for title, index in target_facts(sample)
    ]
    return _finish(sample, kind, seed, edits)


def sentence_replacement(sample: QASample, seed: int = 0, on_empty: str = "error") -> PerturbedSample:
    """Swap each target sentence for a seeded pick of a non-supporting sentence of the same document.

    ``on_empty`` decides what happens when a document has no candidate:
    ``"error"`` raises NoIrrelevantSentence, ``"degrade-to-removal"`` removes
    the sentence instead and flags the edit ``degraded``.
    """
    if on_empty not in ("error", "degrade-to-removal"):
        raise ValueError(f"unknown on_empty policy {on_empty!r}")
    kind = PerturbationKind.SentenceReplacement
    supporting = set(sample.supporting_facts)
    rng = make_rng("sentence_replacement", seed, sample.id)
    edits = []
    for title, index in target_facts(sample):
        sentences = sample.document(title).sentences
        target = sentences[index]
        candidates = [
            s for i, s in enumerate(sentences) if (title, i) not in supporting and s != target
        ]
        if not candidates:
            if on_empty == "error":
                raise NoIrrelevantSentence(
                    f"{sample.id}: document {title!r} has no non-supporting sentence"
                )
            edits.append(Edit("remove", kind, title, index, before=target, flags=("degraded",)))
            continue
        pick = candidates[int(rng.integers(len(candidates)))]
        edits.append(Edit("replace", kind, title, index, before=target, after=pick))
    return _finish(sample, kind, seed, edits)


EntityDetector = Callable[[str, Sequence[Document]], Sequence[tuple[int, int]]]


def _strip_parenthetical(title: str) -> str:
    return re.sub(r"\s*\([^)]*\)\s*$", "", title).strip()


def title_entity_detector(sentence: str, context: Sequence[Document]) -> list[tuple[int, int]]:
    """Leftmost-longest, non-overlapping occurrences of any context title.

    Both the full title and its form without a trailing parenthetical
    ("Mercury (planet)" -> "Mercury") are searched, on word boundaries.
    """
    names = set()
    for doc in context:
        names.add(doc.title)
        stripped = _strip_parenthetical(doc.title)
        if stripped:
            names.add(stripped)
    hits = []
    for name in names:
        for m in re.finditer(r"(?<!\w)" + re.escape(name) + r"(?!\w)", sentence):
            hits.append((m.start(), m.end()))
    hits.sort(key=lambda h: (h[0], -(h[1] - h[0])))
    spans, last_end = [], 0
    for start, end in hits:
        if start >= last_end:
            spans.append((start, end))
            last_end = end
    return spans


def ner_replacement(sample: QASample, detector: EntityDetector | None = None,
                    seed: int = 0) -> PerturbedSample:
    kind = PerturbationKind.NerReplacement
    detector = detector or title_entity_detector
    edits = []
    for title, index in target_facts(sample):
        sentence = sample.document(title).sentences[index]
        spans = sorted(tuple(s) for s in detector(sentence, sample.context))
        for (s0, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ValueError(f"detector returned overlapping spans {spans}")
        if not spans:
            edits.append(Edit("unmatched", kind, title, index, before=sentence,
                              after=sentence, flags=("unmatched",)))
        for start, end in spans:
            edits.append(Edit("span", kind, title, index, (start, end), sentence[start:end], MASK))
    return _finish(sample, kind, seed, edits)


def word_reordering(sample: QASample, seed: int = 0) -> PerturbedSample:
    """Shuffle token order inside each target sentence; tokens are re-joined by single spaces."""
    kind = PerturbationKind.WordReordering
    rng = make_rng("word_reordering", seed, sample.id)
    edits = []
    for title, index in target_facts(sample):
        sentence = sample.document(title).sentences[index]
        tokens = [t for t, _, _ in tokenize(sentence)]
        shuffled = [tokens[i] for i in rng.permutation(len(tokens))]
        edits.append(Edit("replace", kind, title, index, before=sentence, after=" ".join(shuffled)))
    return _finish(sample, kind, seed, edits)


def source_reordering(sample: QASample, seed: int = 0) -> PerturbedSample:
    kind = PerturbationKind.SourceReordering
    rng = make_rng("source_reordering", seed, sample.id)
    perm = rng.permutation(len(sample.context))
    # new position p holds old document perm[p]
    edits = [
        Edit("move", kind, sample.context[int(old)].title, span=(int(old), new))
        for new, old in enumerate(perm)
        if int(old) != new
    ]
    return _finish(sample, kind, seed, edits)


def random_noise_injection(sample: QASample, lexicon: Lexicon, seed: int = 0,
                           words_per_sentence: int = 2) -> PerturbedSample:
    """Insert noise words at distinct token boundaries (start, inside, end) of each target."""
    kind = PerturbationKind.RandomNoiseInjection
    if not lexicon.noise:
        raise MissingLexicon("random noise injection needs a non-empty noise vocabulary")
    rng = make_rng("random_noise_injection", seed, sample.id)
    edits = []
    for title, index in target_facts(sample):
        sentence = sample.document(title).sentences[index]
        starts = [s for _, s, _ in tokenize(sentence)]
        slots = starts + [len(sentence)] if starts else [0]
        n = min(words_per_sentence, len(slots))
        positions = sorted(int(p) for p in rng.choice(len(slots), size=n, replace=False))
        vocab = lexicon.noise
        picks = rng.choice(len(vocab), size=n, replace=len(vocab) < n)
        for pos, w in zip(positions, picks):
            offset = slots[pos]
            word = vocab[int(w)]
            if not sentence:
                text = word
            elif offset == len(sentence):
                text = " " + word
            else:
                text = word + " "
            edits.append(Edit("span", kind, title, index, (offset, offset), "", text))
    return _finish(sample, kind, seed, edits)


def _match_case(template: str, word: str) -> str:
    if template.isupper() and len(template) > 1:
        return word.upper()
    if template[:1].isupper():
        return word[:1].upper() + word[1:]
    return word


def lexical_replacement(sample: QASample, lexicon: Lexicon, kind: PerturbationKind,
                        seed: int = 0) -> PerturbedSample:
    """Substitute every whole-word lexicon hit inside the target sentences."""
    table = {PerturbationKind.SynonymReplacement: "synonyms",
             PerturbationKind.AntonymReplacement: "antonyms"}[kind]
    rng = make_rng("lexical_replacement", table, seed, sample.id)
    edits = []
    for title, index in target_facts(sample):
        sentence = sample.document(title).sentences[index]
        hits = 0
        for token, start, end in tokenize(sentence):
            options = lexicon.lookup(token, table)
            if not options:
                continue
            choice = options[int(rng.integers(len(options)))]
            edits.append(Edit("span", kind, title, index, (start, end), token, _match_case(token, choice)))
            hits += 1
        if not hits:
            edits.append(Edit("unmatched", kind, title, index, before=sentence,
                              after=sentence, flags=("empty_lexicon_hit",)))
    if all(e.op == "unmatched" for e in edits):
        warnings.warn(f"{sample.id}: no {table} found in target sentences", EmptyLexiconHit)
    return _finish(sample, kind, seed, edits)


def prefix_injection(sample: QASample, prefix: str, seed: int = 0) -> PerturbedSample:
    """Prepend ``prefix`` to the question, separated by one space."""
    if not prefix or not prefix.strip():
        raise MissingPrefix("prefix injection needs a non-empty prefix")
    joined = prefix if prefix[-1].isspace() else prefix + " "
    edit = Edit("prefix", PerturbationKind.PrefixInjection, before=sample.question,
                after=joined + sample.question)
    return _finish(sample, PerturbationKind.PrefixInjection, seed, [edit])


def apply_perturbation(sample: QASample, kind, seed: int = 0, lexicon: Lexicon | None = None,
                       prefix: str | None = None, detector: EntityDetector | None = None,
                       on_empty: str = "error") -> PerturbedSample:
    kind = PerturbationKind(kind)
    if kind is PerturbationKind.Original:
        return original(sample, seed)
    if kind is PerturbationKind.SentenceRemoval:
        return sentence_removal(sample, seed)
    if kind is PerturbationKind.SentenceReplacement:
        return sentence_replacement(sample, seed, on_empty=on_empty)
    if kind is PerturbationKind.NerReplacement:
        return ner_replacement(sample, detector, seed)
    if kind is PerturbationKind.WordReordering:
        return word_reordering(sample, seed)
    if kind is PerturbationKind.SourceReordering:
        return source_reordering(sample, seed)
    if kind is PerturbationKind.PrefixInjection:
        if prefix is None:
            raise MissingPrefix("prefix injection needs a prefix")
        return prefix_injection(sample, prefix, seed)
    if lexicon is None:
        raise MissingLexicon(f"{kind.value} needs a lexicon")
    if kind is PerturbationKind.RandomNoiseInjection:
        return random_noise_injection(sample, lexicon, seed)
    return lexical_replacement(sample, lexicon, kind, seed)
