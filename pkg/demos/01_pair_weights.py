"""
Pair weights of the three losses
================================

Every pair loss here is a weighted sum of similarities: negatives pull the
loss up, positives push it down, and the scheme decides the weights. This
script prints the weights each scheme gives to one anchor's pairs.
"""

import numpy as np

from xbm.losses import LossHyperparams, gpw_loss, pair_weights, similarity

# one anchor (label 0) against five candidates: two positives, three negatives
anchor = np.array([[1.0, 0.0, 0.0]])
others = np.array(
    [
        [0.9, 0.43589, 0.0],  # positive, close
        [0.2, 0.97980, 0.0],  # positive, far: a hard positive
        [0.8, 0.0, 0.6],  # negative, close: a hard negative
        [0.3, 0.0, 0.95394],  # negative, moderately far
        [-0.5, 0.86603, 0.0],  # negative, far
    ]
)
others /= np.linalg.norm(others, axis=1, keepdims=True)
sim = similarity(anchor, others, [0], [0, 0, 1, 2, 3], [0], [1, 2, 3, 4, 5])
print("similarities:", np.round(sim.s[0], 3))

# contrastive keeps negatives above the margin, triplet counts violations,
# multi-similarity reweights smoothly
for scheme in ("contrastive", "triplet", "ms"):
    h = LossHyperparams(scheme=scheme, lambda_contrastive=0.5, eta_triplet=0.1, ms_lambda=0.5)
    w = pair_weights(sim, h)
    res = gpw_loss(sim, w)
    print(f"{scheme:>11}: weights {np.round(w[0], 3)}  loss {res.loss:+.3f}  valid negatives {res.valid_negative_count}")
