"""Mini-batch training with an optional cross-batch memory phase.

Iterations before ``warmup_iterations`` use the plain in-batch pair loss.
With memory enabled, the memory is filled at the warm-up boundary and every
later step follows the same order: embed the batch, enqueue it (dropping the
oldest rows), score the anchors against the whole memory, backpropagate,
take an Adam step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .losses import LossHyperparams, batch_loss, pair_weights, similarity
from .memory import XbmConfig, xbm_init, xbm_loss, xbm_update
from .tensor import init_params, net_backward, net_forward

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("iter", "phase", "loss", "valid_neg_mem", "valid_neg_batch", "lr")


@dataclass(frozen=True)
class TrainConfig:
    P: int = 4
    K: int = 2
    iterations: int = 3000
    warmup_iterations: int = 200
    lr: float = 1e-3
    lr_decay_at: tuple = ()
    lr_decay_factor: float = 0.1
    weight_decay: float = 5e-4
    seed: int = 0
    hidden_dims: tuple = (64,)
    embedding_dim: int = 16
    loss: LossHyperparams = field(default_factory=LossHyperparams)
    xbm: XbmConfig | None = None

    def __post_init__(self):
        if self.K < 2 or self.P < 1:
            raise ConfigError("need K >= 2 and P >= 1 so every anchor can have a positive")
        if self.batch_size < 2:
            raise ConfigError("batch size P*K must be >= 2")
        if not 0 <= self.warmup_iterations < self.iterations:
            raise ConfigError("warmup_iterations must be in [0, iterations)")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        object.__setattr__(self, "lr_decay_at", tuple(int(t) for t in self.lr_decay_at))
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))

    @property
    def batch_size(self):
        return self.P * self.K

    def lr_at(self, iteration):
        """Piecewise-constant schedule: multiply by the decay factor at each boundary."""
        passed = sum(1 for t in self.lr_decay_at if iteration >= t)
        return self.lr * self.lr_decay_factor**passed


@dataclass
class MiniBatch:
    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    # classes that had fewer than K rows and were sampled with replacement
    flagged: tuple = ()


def pk_sample(dataset, P, K, rng):
    """Draw P distinct classes and K rows of each.

    Rows are drawn without replacement inside a class; classes with fewer
    than K rows fall back to sampling with replacement and are flagged.
    """
    classes = sorted(dataset.class_index)
    if len(classes) < P:
        raise ConfigError(f"P={P} classes requested but the dataset has {len(classes)}")
    chosen = rng.choice(len(classes), size=P, replace=False)
    rows, flagged = [], []
    for c in chosen:
        members = dataset.class_index[classes[c]]
        if members.size < K:
            flagged.append(classes[c])
            rows.append(rng.choice(members, size=K, replace=True))
        else:
            rows.append(rng.choice(members, size=K, replace=False))
    if flagged:
        log.warning("classes %s have fewer than K=%d rows; sampled with replacement", flagged, K)
    rows = np.concatenate(rows)
    return MiniBatch(dataset.features[rows], dataset.labels[rows], dataset.ids[rows], tuple(flagged))


class AdamState:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(params, grads, state, lr, weight_decay=0.0):
    """Bias-corrected Adam with L2 weight decay folded into the gradient.

    ``params`` are updated in place.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params, grads and optimizer state differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        g = g + weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class MetricsLog:
    """Per-iteration metrics, optionally mirrored to a CSV stream flushed every row."""

    def __init__(self, stream=None):
        self.rows = []
        self._stream = stream
        if stream is not None:
            stream.write(",".join(METRIC_COLUMNS) + "\n")
            stream.flush()

    def append(self, **row):
        self.rows.append(row)
        if self._stream is not None:
            self._stream.write(format_metric_row(row) + "\n")
            self._stream.flush()

    def column(self, name):
        return [r[name] for r in self.rows]

    def to_csv(self):
        return "\n".join([",".join(METRIC_COLUMNS)] + [format_metric_row(r) for r in self.rows]) + "\n"


def format_metric_row(r):
    return f"{r['iter']},{r['phase']},{r['loss']!r},{r['valid_neg_mem']},{r['valid_neg_batch']},{r['lr']!r}"


@dataclass
class TrainResult:
    net: object
    metrics: MetricsLog
    memory: object = None


def _valid_negatives_in_batch(emb, labels, ids, h):
    sim = similarity(emb, emb, labels, labels, ids, ids)
    w = pair_weights(sim, h)
    return int(np.count_nonzero(sim.negative_mask & (w != 0)))


def train(dataset, config, metrics_stream=None, on_step=None):
    """Train an embedding network on ``dataset``.

    ``on_step(t, net)`` is called after every parameter update with ``t`` the
    number of updates taken so far (and once with ``t=0`` before training).
    """
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    net = init_params([dataset.input_dim, *config.hidden_dims, config.embedding_dim], seeds[0])
    sampler_rng = np.random.default_rng(seeds[1])
    memory_seed = seeds[2]
    params = net.parameters()
    adam = AdamState(params)
    metrics = MetricsLog(metrics_stream)
    h = config.loss
    if config.xbm is not None:
        # fail fast on a bad ratio rather than after the warm-up
        config.xbm.capacity(len(dataset), config.batch_size)
    memory = None
    if on_step is not None:
        on_step(0, net)

    for it in range(config.iterations):
        lr = config.lr_at(it)
        batch = pk_sample(dataset, config.P, config.K, sampler_rng)
        emb, cache = net_forward(net, batch.features)
        use_memory = config.xbm is not None and it >= config.warmup_iterations
        if use_memory:
            if memory is None:
                memory = xbm_init(net, dataset, config.xbm, config.batch_size, memory_seed, iteration=it)
            xbm_update(memory, emb, batch.labels, batch.ids, it)
            res = xbm_loss(memory, emb, batch.labels, batch.ids, h)
            grad = res.grad_anchor
            valid_mem = res.valid_negative_count
            valid_batch = _valid_negatives_in_batch(emb, batch.labels, batch.ids, h)
        else:
            res = batch_loss(emb, batch.labels, batch.ids, h)
            # every row is both anchor and comparison target, so both sides carry gradient
            grad = res.grad_anchor + res.grad_other
            valid_mem = 0
            valid_batch = res.valid_negative_count
        grads = net_backward(net, cache, grad)
        adam_step(params, grads.arrays(), adam, lr, config.weight_decay)
        net.mark_updated()
        if not np.isfinite(res.loss):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        metrics.append(
            iter=it,
            phase="xbm" if use_memory else "batch",
            loss=res.loss,
            valid_neg_mem=valid_mem,
            valid_neg_batch=valid_batch,
            lr=lr,
        )
        if on_step is not None:
            on_step(it + 1, net)
    return TrainResult(net, metrics, memory)


def embed(net, features, chunk=1024):
    """Embeddings of every row of ``features`` (no cache is kept)."""
    out = [net_forward(net, features[i : i + chunk])[0] for i in range(0, len(features), chunk)]
    return np.concatenate(out) if out else np.zeros((0, net.output_dim))
