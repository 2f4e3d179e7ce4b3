"""How the two training losses see one small batch."""
import numpy as np

from uco.losses import LossBatch, dual_loss, mnrl, ocl

rng = np.random.default_rng(1)


def at_distance(q, d):
    # a unit vector at cosine distance d from unit vector q
    r = rng.standard_normal(len(q))
    r -= (r @ q) * q
    r /= np.linalg.norm(r)
    return (1 - d) * q + np.sqrt(1 - (1 - d) ** 2) * r


q = rng.standard_normal(16)
q /= np.linalg.norm(q)

# One query, two central titles and two accessories. The accessory at 0.25
# sits closer than the second central title: exactly the confusion the
# training is meant to remove.
positives = [at_distance(q, 0.1), at_distance(q, 0.45)]
negatives = [at_distance(q, 0.25), at_distance(q, 0.9)]
batch = LossBatch.from_lists(q[None, :], [positives], [negatives], margin=0.5)
print("distances", np.round(batch.distances(), 3))

# The ranking loss compares every positive with every negative.
print("MNRL", round(mnrl(batch).loss, 4))

# The contrastive loss only looks at mined pairs: positives farther than the
# nearest negative, negatives nearer than the farthest positive.
res = ocl(batch)
print("mined", res.mined, "OCL", round(res.loss, 4))

# The combined objective is the plain sum of the two.
print("dual", round(dual_loss(batch).loss, 4))

# Once central titles sit inside the margin and accessories outside it,
# both losses go quiet.
quiet = LossBatch.from_lists(q[None, :], [[at_distance(q, 0.05)]], [[at_distance(q, 0.8)]], margin=0.5)
print("separated:", mnrl(quiet).loss, ocl(quiet).mined.any())
