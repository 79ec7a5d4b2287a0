"""Cross-batch memory: a fixed-capacity FIFO of detached embeddings.

Each training step enqueues the current batch (value copies, so no gradient
can ever reach stored rows), drops the oldest rows once full, and scores the
batch anchors against everything held in memory with the usual pair losses.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass

import numpy as np

from .data import atomic_write, load_matrix, save_matrix
from .errors import ConfigError, ContractError, FormatError, ShapeError, StateError
from .losses import gpw_loss, pair_weights, similarity
from .tensor import as_matrix, net_forward


@dataclass(frozen=True)
class XbmConfig:
    """``memory_ratio`` is the capacity as a fraction of the training set size."""

    memory_ratio: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.memory_ratio <= 1.0:
            raise ConfigError(f"memory_ratio must be in (0, 1], got {self.memory_ratio}")

    def capacity(self, dataset_size, batch_size=1):
        cap = int(round(self.memory_ratio * dataset_size))
        if cap > dataset_size:
            raise ConfigError(f"memory size {cap} exceeds dataset size {dataset_size}")
        if cap < batch_size:
            raise ConfigError(
                f"memory size {cap} (ratio {self.memory_ratio} of {dataset_size}) "
                f"is smaller than the batch size {batch_size}"
            )
        return cap


class XbmState:
    """Ring buffer of ``(embedding, label, id, iteration_written)`` rows."""

    def __init__(self, capacity, dim, dataset_size=None):
        if capacity <= 0 or dim <= 0:
            raise ConfigError("capacity and dim must be positive")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self.dataset_size = dataset_size
        self._feats = np.zeros((self.capacity, self.dim))
        self._labels = np.zeros(self.capacity, dtype=np.int64)
        self._ids = np.zeros(self.capacity, dtype=np.int64)
        self._iters = np.zeros(self.capacity, dtype=np.int64)
        self._head = 0  # slot of the oldest row
        self.size = 0

    def __len__(self):
        return self.size

    def _order(self):
        return (self._head + np.arange(self.size)) % self.capacity

    # FIFO-ordered copies, oldest first
    @property
    def feats(self):
        return self._feats[self._order()]

    @property
    def labels(self):
        return self._labels[self._order()]

    @property
    def ids(self):
        return self._ids[self._order()]

    @property
    def iterations(self):
        return self._iters[self._order()]

    def enqueue(self, feats, labels, ids, iteration):
        feats = as_matrix(feats, "feats")
        b = feats.shape[0]
        if feats.shape[1] != self.dim:
            raise ShapeError(f"memory holds {self.dim}-d rows, got {feats.shape[1]}-d")
        if b > self.capacity:
            raise ContractError(f"batch of {b} does not fit a memory of {self.capacity}")
        labels = np.asarray(labels, dtype=np.int64)
        ids = np.asarray(ids, dtype=np.int64)
        if labels.shape != (b,) or ids.shape != (b,):
            raise ShapeError("need one label and id per enqueued row")
        if self.size and iteration < self._iters[(self._head + self.size - 1) % self.capacity]:
            raise ContractError("iterations must be non-decreasing")
        slots = (self._head + self.size + np.arange(b)) % self.capacity
        # fancy-index assignment copies; callers may mutate their arrays afterwards
        self._feats[slots] = feats
        self._labels[slots] = labels
        self._ids[slots] = ids
        self._iters[slots] = iteration
        overflow = max(0, self.size + b - self.capacity)
        self.size += b - overflow
        self._head = (self._head + overflow) % self.capacity

    def dequeue(self, count):
        """Drop the ``count`` oldest rows (``enqueue`` already does this at capacity)."""
        count = min(int(count), self.size)
        self._head = (self._head + count) % self.capacity
        self.size -= count

    def _live(self):
        # storage order is fine for scoring: the loss is a sum over pairs
        if self.size < self.capacity:
            idx = self._order()
            return self._feats[idx], self._labels[idx], self._ids[idx]
        return self._feats, self._labels, self._ids


def xbm_init(net, dataset, config, batch_size, seed, iteration=0):
    """Fill a fresh memory with embeddings of randomly chosen training rows."""
    n = len(dataset)
    cap = config.capacity(n, batch_size)
    rng = np.random.default_rng(seed)
    rows = rng.choice(n, size=cap, replace=False)
    emb, _ = net_forward(net, dataset.features[rows])
    state = XbmState(cap, net.output_dim, dataset_size=n)
    state.enqueue(emb, dataset.labels[rows], dataset.ids[rows], iteration)
    return state


def xbm_update(state, batch_embeddings, batch_labels, batch_ids, iteration):
    """Enqueue the batch; the oldest rows fall out once the memory is full."""
    state.enqueue(batch_embeddings, batch_labels, batch_ids, iteration)


def _memory_similarity(state, anchors, anchor_labels, anchor_ids):
    if state.size == 0:
        raise StateError("memory is empty")
    feats, labels, ids = state._live()
    return similarity(anchors, feats, anchor_labels, labels, anchor_ids, ids)


def xbm_loss(state, anchors, anchor_labels, anchor_ids, h):
    """Pair loss of the anchors against every memory row.

    Memory rows are constants: only ``grad_anchor`` is meaningful, and
    ``grad_other`` is dropped from the result.
    """
    sim = _memory_similarity(state, anchors, anchor_labels, anchor_ids)
    res = gpw_loss(sim, pair_weights(sim, h), m=sim.shape[0])
    res.grad_other = None
    return res


def xbm_stats(state, anchors, anchor_labels, anchor_ids, h):
    """Valid (non-zero weight) negative pairs against memory and within the batch."""
    sim_mem = _memory_similarity(state, anchors, anchor_labels, anchor_ids)
    w_mem = pair_weights(sim_mem, h)
    sim_batch = similarity(anchors, anchors, anchor_labels, anchor_labels, anchor_ids, anchor_ids)
    w_batch = pair_weights(sim_batch, h)
    valid_mem = int(np.count_nonzero(sim_mem.negative_mask & (w_mem != 0)))
    valid_batch = int(np.count_nonzero(sim_batch.negative_mask & (w_batch != 0)))
    return valid_mem, valid_batch


# ---------------------------------------------------------------- snapshots
#
# A snapshot is a matrix whose rows are ``id, label, e_0 .. e_{D-1}``. Ids and
# labels are stored as float64, which is exact below 2**53.


def snapshot_matrix(state):
    return np.column_stack([state.ids.astype(np.float64), state.labels.astype(np.float64), state.feats])


def save_snapshot(path, state):
    save_matrix(path, snapshot_matrix(state))


def save_snapshot_csv(path, state):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "label"] + [f"e{k}" for k in range(state.dim)])
    for i, y, v in zip(state.ids, state.labels, state.feats):
        writer.writerow([int(i), int(y)] + [repr(float(x)) for x in v])
    atomic_write(path, buf.getvalue())


def load_snapshot(path, capacity=None):
    mat = load_matrix(path)
    if mat.shape[1] < 3:
        raise FormatError("snapshot needs id, label and at least one embedding column")
    state = XbmState(capacity or max(mat.shape[0], 1), mat.shape[1] - 2)
    if mat.shape[0]:
        state.enqueue(mat[:, 2:], mat[:, 1].astype(np.int64), mat[:, 0].astype(np.int64), 0)
    return state
