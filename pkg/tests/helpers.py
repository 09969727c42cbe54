from __future__ import annotations

from ragtemp.dataset import Document, QASample


def make_sample(facts, docs, qtype="bridge", sid="s1", question="Who?", answer="X") -> QASample:
    """Build a sample from ``{title: [sentences]}`` and ``[(title, idx)]``."""
    return QASample(
        id=sid, question=question, gold_answer=answer, question_type=qtype,
        context=tuple(Document(t, tuple(s)) for t, s in docs.items()),
        supporting_facts=tuple(tuple(f) for f in facts),
    )
