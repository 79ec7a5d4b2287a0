"""The desk-scale retrieval task used by the experiments, demos and CLI defaults.

100 fine-grained classes of 20 instances in 32 dimensions. Classes come in
10 coarse groups, so a random 8-row mini-batch rarely contains a class's
hard negatives (its siblings); 8 of the 32 input coordinates are pure
nuisance noise, so raw-feature retrieval is poor and a metric has to be
learned. A quarter of every class is held out for evaluation.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .data import split_per_class, synth_clusters
from .retrieval import recall_at_k
from .train import TrainConfig, embed

TASK = dict(
    num_classes=100,
    per_class=20,
    d_in=32,
    center_scale=1.0,
    noise_sigma=0.15,
    num_superclasses=10,
    subclass_spread=0.8,
    nuisance_dims=8,
    nuisance_sigma=0.5,
)
HOLDOUT_FRACTION = 0.25


def desk_task(seed, **overrides):
    """``(train, heldout)`` split of the desk dataset for ``seed``."""
    params = {**TASK, **overrides}
    data = synth_clusters(seed=seed, **params)
    return split_per_class(data, HOLDOUT_FRACTION, seed)


def desk_config(seed=0, **overrides):
    base = TrainConfig(
        P=4,
        K=2,
        iterations=3000,
        warmup_iterations=200,
        lr=3e-3,
        lr_decay_at=(2000,),
        lr_decay_factor=0.1,
        weight_decay=5e-4,
        seed=seed,
        hidden_dims=(64,),
        embedding_dim=16,
    )
    return dataclasses.replace(base, **overrides)


def heldout_recall(net, train_set, heldout, ks=(1,)):
    """Recall@K of held-out queries against held-out + training rows.

    The query itself is excluded from the gallery; every other instance of
    its class, seen or unseen in training, counts as a hit.
    """
    e_test = embed(net, heldout.features)
    e_train = embed(net, train_set.features)
    gallery = np.concatenate([e_test, e_train])
    labels = np.concatenate([heldout.labels, train_set.labels])
    gallery_ids = np.arange(len(gallery))
    return recall_at_k(
        e_test,
        heldout.labels,
        gallery,
        labels,
        ks,
        self_exclude=True,
        query_ids=gallery_ids[: len(heldout)],
        gallery_ids=gallery_ids,
    )
