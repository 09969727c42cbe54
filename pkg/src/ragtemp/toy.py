"""Synthetic HotpotQA-format records for offline runs and tests.

The records are nonsense but structurally faithful: titled documents,
supporting facts spread over two gold documents, distractor documents,
and at least two non-supporting sentences in every gold document so that
sentence replacement always has candidates.
"""
from __future__ import annotations

from ._rng import make_rng

_FIRST = ["Alder", "Brisk", "Cedar", "Dunmore", "Elwood", "Fenwick", "Garrow", "Hollis",
          "Ivesby", "Jarrow", "Kestrel", "Lindell", "Marlow", "Norcott", "Oakham", "Pellow"]
_SECOND = ["Vale", "Harbor", "Ridge", "Abbey", "Crossing", "Works", "Hall", "Point"]
_NOUNS = ["brewery", "observatory", "railway", "orchestra", "library", "shipyard", "museum", "mill"]
_PLACES = ["Oslo", "Lyon", "Porto", "Ghent", "Turin", "Bergen", "Leeds", "Graz"]
_ADJ = ["historic", "modest", "sprawling", "private", "municipal", "coastal"]
_FILLER = [
    "It was renovated twice during the last century.",
    "Local newspapers covered its opening in detail.",
    "Visitors often mention the narrow entrance hall.",
    "The site later hosted a small seasonal market.",
    "Several records from that period were lost in a fire.",
    "A footpath connects it to the neighbouring village.",
]


def _pick(rng, seq, size=None, replace=True):
    if size is None:
        return seq[int(rng.integers(len(seq)))]
    return [seq[i] for i in rng.choice(len(seq), size=size, replace=replace)]


def _fact_sentence(rng, title, noun, place, i):
    year = int(rng.integers(1820, 1990))
    templates = [
        f"{title} is a {_pick(rng, _ADJ)} {noun} located in {place}.",
        f"{title} was founded in {year} by a group of merchants.",
        f"The {noun} known as {title} employs about {int(rng.integers(20, 900))} people.",
        f"In {year}, {title} was acquired by a company based in {place}.",
    ]
    return templates[i % len(templates)]


def _gold_document(rng, title, noun, place, n_facts):
    facts = [_fact_sentence(rng, title, noun, place, i) for i in range(n_facts)]
    filler = _pick(rng, _FILLER, 2, replace=False)
    sentences = facts + filler
    order = rng.permutation(len(sentences))
    shuffled = [sentences[i] for i in order]
    support = sorted(int(list(order).index(i)) for i in range(n_facts))
    return [title, shuffled], support


def make_record(rid: str, fact_count: int, question_type: str, seed: int = 0) -> dict:
    rng = make_rng("toy", seed, rid)
    names = [int(k) for k in rng.choice(len(_FIRST) * len(_SECOND), size=4, replace=False)]
    titles = [f"{_FIRST[k // len(_SECOND)]} {_SECOND[k % len(_SECOND)]}" for k in names]
    nouns = _pick(rng, _NOUNS, 2)
    places = _pick(rng, _PLACES, 2)
    n_a = (fact_count + 1) // 2
    n_b = fact_count - n_a
    doc_a, sup_a = _gold_document(rng, titles[0], nouns[0], places[0], n_a)
    doc_b, sup_b = _gold_document(rng, titles[1], nouns[1], places[1], n_b)
    distractors = [[t, _pick(rng, _FILLER, 3, replace=False)] for t in titles[2:]]
    context = [doc_a, doc_b] + distractors
    context = [context[i] for i in rng.permutation(len(context))]
    facts = [[titles[0], i] for i in sup_a] + [[titles[1], i] for i in sup_b]
    if question_type == "comparison":
        question = f"Are {titles[0]} and {titles[1]} both located in {places[0]}?"
        answer = "yes" if places[0] == places[1] else "no"
    else:
        question = f"In which city is the {nouns[0]} linked to {titles[1]} located?"
        answer = places[0]
    return {
        "_id": rid,
        "question": question,
        "answer": answer,
        "type": question_type,
        "supporting_facts": facts,
        "context": context,
    }


def make_toy_records(per_cell: int = 4, seed: int = 0, fact_counts=(2, 3, 4),
                     question_types=("bridge", "comparison")) -> list[dict]:
    records = []
    for n in fact_counts:
        for qt in question_types:
            for k in range(per_cell):
                records.append(make_record(f"toy-{n}{qt[0]}-{k:03d}", n, qt, seed))
    return records
