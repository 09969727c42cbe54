# %% [markdown]
# Scoring a generated answer against a reference
#
# Lexical metrics compare normalized tokens: lower-cased, punctuation and
# the articles a/an/the removed. BERTScore instead matches each token to its
# most similar counterpart in embedding space.

# %%
import numpy as np

from ragtemp.metrics import (
    HashingTokenEmbedder,
    TokenEmbeddings,
    bertscore,
    bertscore_greedy,
    exact_match,
    normalize,
    rouge,
    token_f1,
)

reference = "Shirley Temple served as Chief of Protocol of the United States."
answers = [
    "Shirley Temple served as Chief of Protocol of the United States.",
    "She served as the Chief of Protocol.",
    "Chief of Protocol of the United States, served by Shirley Temple.",
    "She was an actress.",
]
print("reference tokens:", normalize(reference))
print(f"{'answer':<68} {'EM':>3} {'F1':>5} {'R-1':>5} {'R-2':>5} {'R-L':>5}")
for a in answers:
    print(f"{a:<68} {exact_match(a, reference):>3} {token_f1(a, reference):5.2f} "
          f"{rouge(a, reference, 1):5.2f} {rouge(a, reference, 2):5.2f} {rouge(a, reference, 'L'):5.2f}")

# Reordering keeps unigram overlap but breaks bigrams and the longest
# common subsequence, which is what separates ROUGE-1 from ROUGE-2 and -L.

# %%
# Greedy BERTScore on hand-made embeddings. Each predicted token takes its
# best cosine match among reference tokens (precision) and vice versa
# (recall). Negative cosines count as zero.
e1, e2, e3 = np.eye(3)
pred = TokenEmbeddings(("cat", "sat"), np.stack([e1, e2]))
ref = TokenEmbeddings(("cat",), np.stack([e1]))
print("\nP, R, F =", bertscore_greedy(pred, ref))  # (0.5, 1.0, 0.667)

# %%
# Offline runs use a deterministic hashing embedder in place of a
# transformer encoder. Its scores rank answers sensibly but are not
# comparable with published BERTScore numbers.
emb = HashingTokenEmbedder()
for a in answers:
    print(f"{bertscore(a, reference, emb):.3f}  {a}")
