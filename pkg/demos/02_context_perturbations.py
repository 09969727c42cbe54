# %% [markdown]
# Perturbing the gold context of a multi-hop question
#
# Each HotpotQA question comes with the sentences that support its answer.
# The benchmark edits the last n // 2 of those facts (2 facts -> 1, 3 -> 1,
# 4 -> 2) and leaves every other sentence byte for byte.
# Every change is logged, so a perturbed context can be rebuilt from the
# original sample plus the log.

# %%
from pathlib import Path

from ragtemp.dataset import load_dataset, supporting_sentences
from ragtemp.perturb import PerturbationKind, apply_perturbation, perturb_count, replay_edits

fixtures = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "two_records.json"
sample = load_dataset(fixtures)[1]
print(sample.question, "->", sample.gold_answer)
print(f"{sample.fact_count} supporting facts, {perturb_count(sample.fact_count)} will be edited")
for title, idx, text in supporting_sentences(sample):
    print(f"  [{title} #{idx}] {text}")


# %%
def show(kind, seed=0):
    p = apply_perturbation(sample, kind, seed)
    print(f"\n== {kind.value}")
    for edit in p.edits:
        print(f"  {edit.op:<8} {edit.title} #{edit.index}: {edit.before!r} -> {edit.after!r}")
    # rebuilding from the log gives the same context and query
    assert replay_edits(sample, p.edits) == (p.context, p.query)
    return p


removal = show(PerturbationKind.SentenceRemoval)
replacement = show(PerturbationKind.SentenceReplacement, seed=3)
masked = show(PerturbationKind.NerReplacement)
# The default entity detector only knows the document titles of the context.
# This target sentence names none of them, so the edit is logged as
# "unmatched" and the text is left as it was.

# %%
# The input sample is never modified; the perturbed copies live alongside it.
print("\noriginal sentence count :", sum(len(d.sentences) for d in sample.context))
print("after removal           :", sum(len(d.sentences) for d in removal.context))

# %%
# Seeds only matter where a random choice is made (which irrelevant sentence
# replaces a fact); the same seed always gives the same replacement.
again = apply_perturbation(sample, PerturbationKind.SentenceReplacement, 3)
print("replacement reproducible:", again == replacement)
