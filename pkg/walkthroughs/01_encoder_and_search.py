"""Hashed n-gram encoder and exact cosine search, step by step."""
import numpy as np

from uco.encoder import FeaturizerConfig, collision_rate, cosine, encode, feature_strings, featurize, init_model
from uco.retrieval import build_index, top_k

# A title is broken into character n-grams (3 to 5 chars, with < > marking
# token boundaries) plus whole tokens. Each feature hashes to one table row.
cfg = FeaturizerConfig()
print(feature_strings("iphone 11", cfg)[:8])
print(featurize("iphone 11", cfg)[:8])

# The table is small random noise at first. Encoding averages the rows of a
# text's features and scales the result to unit length.
model = init_model(dim=64, seed=0)
v = encode("iphone 11 case", model)
print(v.shape, np.linalg.norm(v))

# Shared n-grams already make related strings close before any training.
for other in ("iphone 11", "iphone 11 case", "samsung tv"):
    print(f"{other:>16}  {cosine(encode('iphone 11 case', model), encode(other, model)):+.3f}")

# Hash collisions are rare at 2**18 buckets.
titles = [f"model {i} {c}" for i in range(2000) for c in ("case", "charger", "cable")]
print(f"collision rate {100 * collision_rate(titles, cfg):.2f}%")

# An index stores unit vectors row-wise. Search is an exact matrix product;
# equal scores are broken by title id so results never depend on order.
corpus = [("t1", "apple iphone 11 64gb black"), ("t2", "iphone 11 silicone case"),
          ("t3", "samsung galaxy s10"), ("t4", "iphone 11 screen protector")]
index = build_index(corpus, model)
for title_id, score in top_k(index, encode("iphone 11", model), k=3):
    print(title_id, f"{score:.4f}")
