"""Pair-weighting view of pair-based metric-learning losses.

Every supported loss is written as

    L = 1/m * sum_i [ sum_{y_j != y_i} w_ij S_ij  -  sum_{y_j == y_i} w_ij S_ij ]

where ``S`` holds cosine similarities between anchor rows and "other" rows
(the same mini-batch, or a memory bank) and ``w`` comes from one of the
weighting schemes below. Weights are constants when differentiating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .tensor import as_matrix, matmul

SCHEMES = ("contrastive", "triplet", "ms")


@dataclass(frozen=True)
class LossHyperparams:
    scheme: str = "contrastive"
    lambda_contrastive: float = 0.5
    eta_triplet: float = 0.1
    ms_beta: float = 50.0
    ms_alpha: float = 2.0
    ms_lambda: float = 1.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown loss scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.ms_beta > 0:
            raise ConfigError("ms_beta must be positive")
        if not self.ms_alpha > 0:
            raise ConfigError("ms_alpha must be positive")
        if not self.eta_triplet >= 0:
            raise ConfigError("eta_triplet must be non-negative")


@dataclass
class SimilarityMatrix:
    """Cosine similarities of m anchors against n other embeddings."""

    s: np.ndarray
    anchors: np.ndarray
    others: np.ndarray
    anchor_labels: np.ndarray
    other_labels: np.ndarray
    anchor_ids: np.ndarray
    other_ids: np.ndarray

    @property
    def shape(self):
        return self.s.shape

    @property
    def self_mask(self):
        return self.anchor_ids[:, None] == self.other_ids[None, :]

    @property
    def positive_mask(self):
        same = self.anchor_labels[:, None] == self.other_labels[None, :]
        return same & ~self.self_mask

    @property
    def negative_mask(self):
        diff = self.anchor_labels[:, None] != self.other_labels[None, :]
        return diff & ~self.self_mask


@dataclass
class PairLossResult:
    loss: float
    grad_anchor: np.ndarray
    valid_negative_count: int
    valid_positive_count: int
    # gradient with respect to the "other" rows; only meaningful when those
    # rows are themselves functions of the parameters (in-batch loss)
    grad_other: np.ndarray | None = None


def _ids_or_default(ids, n):
    return np.arange(n) if ids is None else np.asarray(ids)


def similarity(anchors, others, anchor_labels, other_labels, anchor_ids=None, other_ids=None):
    """``S = anchors @ others.T`` with the label/id bookkeeping attached.

    When ids are omitted each side is numbered 0..n-1, so passing the same
    batch twice without ids still excludes the diagonal self-pairs.
    """
    anchors = as_matrix(anchors, "anchors")
    others = as_matrix(others, "others")
    if anchors.shape[1] != others.shape[1]:
        raise ShapeError(f"embedding widths differ: {anchors.shape[1]} vs {others.shape[1]}")
    m, n = anchors.shape[0], others.shape[0]
    anchor_labels = np.asarray(anchor_labels)
    other_labels = np.asarray(other_labels)
    anchor_ids = _ids_or_default(anchor_ids, m)
    other_ids = _ids_or_default(other_ids, n)
    if anchor_labels.shape != (m,) or anchor_ids.shape != (m,):
        raise ShapeError("anchor labels/ids must have one entry per anchor row")
    if other_labels.shape != (n,) or other_ids.shape != (n,):
        raise ShapeError("other labels/ids must have one entry per other row")
    s = matmul(anchors, others.T)
    return SimilarityMatrix(s, anchors, others, anchor_labels, other_labels, anchor_ids, other_ids)


def contrastive_weights(sim, h):
    """Unit weight on every positive pair and on negatives with ``S > lambda``."""
    neg = sim.negative_mask & (sim.s > h.lambda_contrastive)
    return (neg | sim.positive_mask).astype(np.float64)


def triplet_weights(sim, h):
    """Triplet-loss weights.

    A negative (i, j) is weighted by the number of positives k of anchor i
    with ``S_ik < S_ij + eta``; a positive (i, k) by the number of negatives j
    satisfying the same inequality. Each violating triplet therefore
    contributes once to each side.
    """
    w = np.zeros(sim.shape)
    pos_mask, neg_mask = sim.positive_mask, sim.negative_mask
    for i in range(sim.shape[0]):
        pos = np.flatnonzero(pos_mask[i])
        neg = np.flatnonzero(neg_mask[i])
        if pos.size == 0 or neg.size == 0:
            continue
        s_pos = sim.s[i, pos]
        s_neg = sim.s[i, neg]
        violated = s_pos[:, None] < s_neg[None, :] + h.eta_triplet
        w[i, neg] = violated.sum(axis=0)
        w[i, pos] = violated.sum(axis=1)
    return w


def _softmax_with_one(exponents, mask):
    """``exp(a_j) / (1 + sum_k exp(a_k))`` over masked entries of each row.

    Evaluated with a per-row shift ``c = max(0, max_k a_k)`` so that
    ``exp(a - c)`` never overflows; the ``1`` becomes ``exp(-c)``.
    """
    a = np.where(mask, exponents, -np.inf)
    c = np.maximum(a.max(axis=1, initial=-np.inf), 0.0)[:, None]
    with np.errstate(under="ignore"):
        num = np.where(mask, np.exp(a - c), 0.0)
        den = np.exp(-c) + num.sum(axis=1, keepdims=True)
    w = num / den
    if not np.all(np.isfinite(w)):
        raise NumericError("multi-similarity weights overflowed")
    return w


def ms_weights(sim, h):
    """Multi-similarity weights.

    Negatives: ``exp(beta (S_ij - lam)) / (1 + sum_{k in N_i} exp(beta (S_ik - lam)))``.
    Positives use ``-alpha`` in place of ``beta`` over the positive set.
    """
    neg = sim.negative_mask
    pos = sim.positive_mask
    w = _softmax_with_one(h.ms_beta * (sim.s - h.ms_lambda), neg)
    w += _softmax_with_one(-h.ms_alpha * (sim.s - h.ms_lambda), pos)
    return w


_WEIGHTERS = {
    "contrastive": contrastive_weights,
    "triplet": triplet_weights,
    "ms": ms_weights,
}


def pair_weights(sim, h):
    """Weights for the scheme named by ``h.scheme``."""
    return _WEIGHTERS[h.scheme](sim, h)


def gpw_loss(sim, w, m=None):
    """Evaluate the weighted-similarity loss and its gradients.

    ``grad_anchor[i] = 1/m (sum_neg w_ij v_j - sum_pos w_ij v_j)``; the other
    side is held fixed. ``grad_other`` is the matching gradient for the other
    rows, for callers whose "others" are live embeddings too.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != sim.shape:
        raise ShapeError(f"weights {w.shape} do not match similarities {sim.shape}")
    m = sim.shape[0] if m is None else int(m)
    if m <= 0:
        raise ShapeError("anchor count must be positive")
    neg, pos = sim.negative_mask, sim.positive_mask
    signed = np.where(neg, w, 0.0) - np.where(pos, w, 0.0)
    loss = float(np.sum(signed * sim.s) / m)
    grad_anchor = matmul(signed, sim.others) / m
    grad_other = matmul(signed.T, sim.anchors) / m
    return PairLossResult(
        loss=loss,
        grad_anchor=grad_anchor,
        valid_negative_count=int(np.count_nonzero(neg & (w != 0))),
        valid_positive_count=int(np.count_nonzero(pos & (w != 0))),
        grad_other=grad_other,
    )


def batch_loss(embeddings, labels, ids, h):
    """In-batch loss where every row is both an anchor and an "other"."""
    sim = similarity(embeddings, embeddings, labels, labels, ids, ids)
    return gpw_loss(sim, pair_weights(sim, h))
