"""Turn short gold answers into sentence-form references."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .dataset import QASample
from .errors import EmptyField, EmptyGeneration
from .llm import GenerationRequest, ResponseCache, generate

REF_INSTRUCTION = (
    "Generate a complete and coherent answer based on the given question and answer, "
    "being as brief as possible:"
)

# Tokens ending in "." that do not end a sentence. Matching is case-sensitive.
ABBREVIATIONS = frozenset({
    "Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "Sr.", "Jr.", "St.", "Mt.", "Ft.", "Gen.", "Col.",
    "Lt.", "Sgt.", "Capt.", "Gov.", "Sen.", "Rep.", "Rev.", "Inc.", "Ltd.", "Co.", "Corp.",
    "vs.", "e.g.", "i.e.", "cf.", "approx.", "No.", "Nos.", "Vol.", "Jan.", "Feb.", "Mar.",
    "Apr.", "Jun.", "Jul.", "Aug.", "Sep.", "Sept.", "Oct.", "Nov.", "Dec.",
    "U.S.", "U.K.", "U.N.", "U.S.A.", "D.C.", "a.m.", "p.m.",
})

_BOUNDARY = re.compile(r"[.!?]+[\"')\]]*(?=\s|$)")
_YES_NO = re.compile(r"(yes|no)\b", re.IGNORECASE)


@dataclass(frozen=True)
class ReferenceAnswer:
    sample_id: str
    text: str
    source: str  # generated | cached | manual-override


def build_ref_prompt(question: str, answer: str) -> tuple[dict, ...]:
    if not question or not question.strip():
        raise EmptyField("question is empty")
    if not answer or not answer.strip():
        raise EmptyField("answer is empty")
    # concatenation, not str.format: braces in the inputs stay literal
    content = "Question: " + question + "\nAnswer: " + answer + "\n" + REF_INSTRUCTION
    return ({"role": "user", "content": content},)


def _is_abbreviation(text: str, end: int) -> bool:
    start = end
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    word = text[start:end]
    if word in ABBREVIATIONS:
        return True
    # single initials such as "J." in "J. R. R. Tolkien"
    return len(word) == 2 and word[0].isupper() and word[1] == "."


def sentence_ends(text: str) -> list[int]:
    """End offsets (exclusive) of each sentence in ``text``."""
    ends = []
    for m in _BOUNDARY.finditer(text):
        stop = m.start() + len(m.group().rstrip("\"')]"))
        if m.group()[0] == "." and _is_abbreviation(text, stop):
            continue
        ends.append(m.end())
    return ends


def extract_reference(generated: str) -> str:
    """First sentence of ``generated``; first two when it opens with Yes/No."""
    text = generated.strip() if generated else ""
    if not text:
        raise EmptyGeneration("generation is empty")
    wanted = 2 if _YES_NO.match(text) else 1
    ends = sentence_ends(text)
    if len(ends) < wanted:
        return text
    return text[: ends[wanted - 1]]


def load_overrides(path) -> dict[str, str]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    return {str(k): str(v) for k, v in data.items()}


def process_references(samples: Sequence[QASample], backend, model: str,
                       cache: ResponseCache | None = None, temperature: float = 1.0,
                       seed: int = 0, max_tokens: int = 1000,
                       overrides: Mapping[str, str] | None = None,
                       max_resamples: int = 3) -> list[ReferenceAnswer]:
    """Generate (or look up) the sentence-form reference of every sample.

    Manual overrides win; everything else goes through ``generate`` so the
    results are cached like any other generation. An empty generation is
    re-drawn with the next run index, up to ``max_resamples`` times.
    """
    overrides = overrides or {}
    refs = []
    for s in samples:
        if s.id in overrides:
            refs.append(ReferenceAnswer(s.id, overrides[s.id], "manual-override"))
            continue
        messages = build_ref_prompt(s.question, s.gold_answer)
        for attempt in range(max_resamples + 1):
            req = GenerationRequest(model, messages, temperature, max_tokens, attempt, seed)
            result = generate(req, backend, cache)
            if result.text.strip():
                break
        else:
            raise EmptyGeneration(f"{s.id}: backbone returned empty text {max_resamples + 1} times")
        refs.append(ReferenceAnswer(s.id, extract_reference(result.text),
                                    "cached" if result.from_cache else "generated"))
    return refs
