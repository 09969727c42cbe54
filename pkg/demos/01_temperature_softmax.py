# %% [markdown]
# Temperature and the next-token distribution
#
# A language model turns logits into probabilities with a softmax, and the
# temperature T divides every logit first. Small T sharpens the distribution
# toward the best token; large T flattens it. This walk-through shows the
# effect numerically and through the mock sampler used by the benchmark.

# %%
import numpy as np

from ragtemp.llm import GenerationRequest, MockModel, entropy, mock_generate, temperature_softmax

logits = np.array([2.0, 1.0, 0.5, -1.0])
for T in (0.0, 0.2, 0.6, 1.0, 1.4, 2.0):
    p = temperature_softmax(logits, T)
    print(f"T={T:<4} p={np.round(p, 3)}  entropy={entropy(p):.3f}")

# T=0 is greedy decoding: a one-hot vector at the largest logit.
# Entropy climbs steadily with T for any non-constant logit vector.

# %%
# Two tokens with logits [1, 0] at T=1 give the first token e/(e+1).
print("closed form:", np.e / (np.e + 1))
print("softmax    :", temperature_softmax([1.0, 0.0], 1.0)[0])

# %%
# The mock sampler draws from exactly that distribution. Each run index gets
# its own seeded generator, so draws are reproducible yet independent.
two = MockModel(("yes", "no"), [[1.0, 0.0]], max_length=1)
msg = ({"role": "user", "content": "demo"},)
draws = [mock_generate(GenerationRequest("demo", msg, 1.0, max_tokens=1, run_index=i, seed=0), two).text
         for i in range(20_000)]
print("share of 'yes' over 20k draws:", draws.count("yes") / len(draws))

# %%
# Longer generations: a random bigram table, three runs per temperature.
# At T=0 every run is identical; the spread grows with T.
rng = np.random.default_rng(4)
vocab = ("the", "river", "flows", "north", "past", "old", "mills", "quietly")
model = MockModel(vocab, rng.normal(0, 2, size=(len(vocab) + 1, len(vocab))), max_length=8, bigram=True)
for T in (0.0, 0.6, 1.4, 2.0):
    runs = [mock_generate(GenerationRequest("demo", msg, T, max_tokens=8, run_index=r, seed=1), model).text
            for r in range(3)]
    print(f"T={T}:")
    for text in runs:
        print("   ", text)
