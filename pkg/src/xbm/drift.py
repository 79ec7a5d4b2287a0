"""Embedding drift across training iterations and stale-embedding gradient error.

Drift of an input x between iterations t - dt and t is
``||f(x; theta_t) - f(x; theta_{t-dt})||^2``, measured on a fixed probe set.
The gradient check compares the parameter gradient of the single-pair loss
``v_i . v_j`` with the one obtained when ``v_j`` is replaced by a stale copy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import save_matrix
from .errors import ConfigError, ContractError, DegenerateInputError
from .tensor import as_matrix, net_backward, net_forward
from .train import train

DRIFT_COLUMNS = ("t", "delta_t", "mean_drift", "p50_drift", "p95_drift")
LEMMA_COLUMNS = ("epsilon", "grad_error_sq", "ratio")


@dataclass(frozen=True)
class ProbeSet:
    ids: np.ndarray
    labels: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        ids = np.array(self.ids, dtype=np.int64)
        if ids.size == 0:
            raise ConfigError("probe set is empty")
        if np.unique(ids).size != ids.size:
            raise ConfigError("probe ids must be unique")
        feats = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if feats.shape[0] != ids.size or labels.shape != ids.shape:
            raise ConfigError("probe ids, labels and features differ in length")
        for arr in (ids, labels, feats):
            arr.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", feats)

    def __len__(self):
        return self.ids.size


def sample_probes(dataset, size=256, seed=0):
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(len(dataset), size=min(size, len(dataset)), replace=False))
    return ProbeSet(dataset.ids[rows], dataset.labels[rows], dataset.features[rows])


@dataclass(frozen=True)
class FeatureSnapshot:
    t: int
    embeddings: np.ndarray
    probe_ids: np.ndarray
    probe_labels: np.ndarray = None


def take_snapshot(net, probes, t):
    emb, _ = net_forward(net, probes.features)
    emb.flags.writeable = False
    return FeatureSnapshot(int(t), emb, probes.ids, probes.labels)


def save_feature_snapshot(path, snapshot):
    """Rows ``id, label, e_0..e_{D-1}``: the memory snapshot layout."""
    labels = snapshot.probe_labels if snapshot.probe_labels is not None else np.zeros(len(snapshot.probe_ids))
    save_matrix(path, np.column_stack([snapshot.probe_ids, labels, snapshot.embeddings]).astype(np.float64))


@dataclass
class DriftRecord:
    t: int
    delta_t: int
    drift: np.ndarray
    mean_drift: float
    p50_drift: float
    p95_drift: float


def feature_drift(a, b):
    """Per-probe squared displacement between snapshot ``a`` (later) and ``b``.

    ``delta_t`` is ``a.t - b.t``; swapping the arguments flips its sign and
    leaves the drift values unchanged.
    """
    if a.probe_ids.shape != b.probe_ids.shape or not np.array_equal(a.probe_ids, b.probe_ids):
        raise ContractError("snapshots were taken on different probe sets")
    diff = a.embeddings - b.embeddings
    d = np.sum(diff * diff, axis=1)
    return DriftRecord(
        t=a.t,
        delta_t=a.t - b.t,
        drift=d,
        mean_drift=float(d.mean()),
        p50_drift=float(np.percentile(d, 50)),
        p95_drift=float(np.percentile(d, 95)),
    )


def drift_csv(records):
    lines = [",".join(DRIFT_COLUMNS)]
    for r in records:
        lines.append(f"{r.t},{r.delta_t},{r.mean_drift!r},{r.p50_drift!r},{r.p95_drift!r}")
    return "\n".join(lines) + "\n"


def drift_schedule(iterations, steps, every=100):
    """Default measurement points: every ``every`` iterations once the largest step fits."""
    start = max(steps)
    first = ((start + every - 1) // every) * every
    return list(range(first, iterations + 1, every))


def drift_experiment(dataset, config, steps=(10, 100, 1000), schedule=None, probe_size=256, probe_seed=0):
    """Train with ``config`` and record drift at every ``t`` in ``schedule`` for each step.

    Snapshots are taken during the single training run, so every drift value
    refers to the actual parameter trajectory. Pairs with ``t - dt < 0`` are
    skipped. Returns ``(records, train_result)``.
    """
    steps = sorted({int(s) for s in steps})
    if not steps or steps[0] <= 0:
        raise ConfigError("drift steps must be positive")
    if schedule is None:
        schedule = drift_schedule(config.iterations, steps)
    schedule = sorted({int(t) for t in schedule})
    if not schedule:
        raise ConfigError("empty drift schedule")
    if schedule[-1] > config.iterations or schedule[0] < 0:
        raise ConfigError(f"schedule reaches t={schedule[-1]} but the run has {config.iterations} iterations")
    pairs = [(t, dt) for t in schedule for dt in steps if t - dt >= 0]
    missing = set(steps) - {dt for _, dt in pairs}
    if missing:
        raise ConfigError(f"no schedule point is late enough for steps {sorted(missing)}")
    wanted = {t for t, _ in pairs} | {t - dt for t, dt in pairs}
    probes = sample_probes(dataset, probe_size, probe_seed)
    snaps = {}

    def on_step(t, net):
        if t in wanted:
            snaps[t] = take_snapshot(net, probes, t)

    result = train(dataset, config, on_step=on_step)
    records = [feature_drift(snaps[t], snaps[t - dt]) for t, dt in pairs]
    return records, result


# ---------------------------------------------------------------- gradient error


@dataclass
class LemmaCheckRecord:
    epsilon: float
    grad_error_sq: float
    ratio: float


def single_pair_param_grad(net, x_i, v_j):
    """Parameter gradient of ``L = f(x_i) . v_j`` with ``v_j`` held constant."""
    x = as_matrix(np.atleast_2d(x_i), "x_i")
    if x.shape[0] != 1:
        raise ConfigError("x_i must be a single input row")
    _, cache = net_forward(net, x)
    return net_backward(net, cache, np.atleast_2d(np.asarray(v_j, dtype=np.float64))).flat()


def lemma1_check(net, x_i, true_vj, stale_vj):
    """Gradient error from scoring ``x_i`` against a stale ``v_j``.

    Returns ``None`` when the stale vector equals the true one (epsilon = 0).
    The stale vector is not required to be unit-norm.
    """
    true_vj = np.asarray(true_vj, dtype=np.float64)
    stale_vj = np.asarray(stale_vj, dtype=np.float64)
    if true_vj.shape != stale_vj.shape:
        raise ContractError("true and stale embeddings differ in shape")
    eps = float(np.sum((true_vj - stale_vj) ** 2))
    if eps == 0.0:
        return None
    g_true = single_pair_param_grad(net, x_i, true_vj)
    g_stale = single_pair_param_grad(net, x_i, stale_vj)
    err = float(np.sum((g_true - g_stale) ** 2))
    return LemmaCheckRecord(eps, err, err / eps)


def lemma_experiment(net, x_i, true_vj, trials=1000, scale=0.1, seed=0):
    """Random stale copies of ``true_vj`` (perturbed, then re-projected onto the sphere)."""
    true_vj = np.asarray(true_vj, dtype=np.float64)
    if np.linalg.norm(true_vj) == 0:
        raise DegenerateInputError("true_vj must be non-zero")
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(trials):
        stale = true_vj + scale * rng.uniform(0.0, 1.0) * rng.standard_normal(true_vj.shape)
        stale /= np.linalg.norm(stale)
        rec = lemma1_check(net, x_i, true_vj, stale)
        if rec is not None:
            records.append(rec)
    return records


def lemma_csv(records):
    lines = [",".join(LEMMA_COLUMNS)]
    lines += [f"{r.epsilon!r},{r.grad_error_sq!r},{r.ratio!r}" for r in records]
    return "\n".join(lines) + "\n"
