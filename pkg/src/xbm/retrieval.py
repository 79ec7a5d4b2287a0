"""Recall@K retrieval evaluation and valid-negative mining reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import as_matrix, matmul


@dataclass
class RetrievalReport:
    ks: list
    recall_at_k: list
    query_count: int
    gallery_count: int
    self_excluded: bool
    name: str = ""

    def recall(self, k):
        return self.recall_at_k[self.ks.index(k)]

    def to_csv(self):
        lines = ["k,recall"]
        lines += [f"{k},{r!r}" for k, r in zip(self.ks, self.recall_at_k)]
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def _first_hit_ranks(sims, hit, valid, gallery_ids):
    """Rank (0-based) of the best-placed correct item for each query.

    Items are ordered by similarity descending, ties by gallery id ascending.
    Queries without any correct item get rank ``inf``.
    """
    ranks = np.full(sims.shape[0], np.inf)
    for q in range(sims.shape[0]):
        cand = np.flatnonzero(hit[q])
        if cand.size == 0:
            continue
        s = sims[q]
        best = s[cand].max()
        tied = cand[s[cand] == best]
        best_id = gallery_ids[tied].min()
        v = valid[q]
        ahead = np.count_nonzero(v & (s > best)) + np.count_nonzero(v & (s == best) & (gallery_ids < best_id))
        ranks[q] = ahead
    return ranks


def _sorted_hits(sims, hit, valid, gallery_ids, kmax):
    found = np.zeros((sims.shape[0], kmax), dtype=bool)
    for q in range(sims.shape[0]):
        cols = np.flatnonzero(valid[q])
        order = cols[np.lexsort((gallery_ids[cols], -sims[q, cols]))]
        found[q] = np.logical_or.accumulate(hit[q, order[:kmax]])
    return found


def recall_at_k(
    queries,
    query_labels,
    gallery,
    gallery_labels,
    ks,
    self_exclude=False,
    query_ids=None,
    gallery_ids=None,
    method="rank",
):
    """Fraction of queries with a same-label gallery item among their top ``k``.

    With ``self_exclude`` each query skips gallery rows carrying its own id
    (ids default to row numbers, so passing the same matrix twice works).
    ``method="sort"`` ranks the full gallery per query; the default computes
    the rank of the first correct item directly. Both give identical results.
    """
    queries = as_matrix(queries, "queries")
    gallery = as_matrix(gallery, "gallery")
    if queries.shape[1] != gallery.shape[1]:
        raise ShapeError("query and gallery embeddings differ in width")
    nq, ng = queries.shape[0], gallery.shape[0]
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    if query_labels.shape != (nq,) or gallery_labels.shape != (ng,):
        raise ShapeError("need one label per query and per gallery row")
    gallery_ids = np.arange(ng) if gallery_ids is None else np.asarray(gallery_ids)
    ks = [int(k) for k in ks]
    if not ks or min(ks) < 1:
        raise ConfigError("ks must be positive integers")

    valid = np.ones((nq, ng), dtype=bool)
    if self_exclude:
        query_ids = np.arange(nq) if query_ids is None else np.asarray(query_ids)
        valid &= query_ids[:, None] != gallery_ids[None, :]
    n_eff = int(valid.sum(axis=1).min()) if nq else ng
    if max(ks) >= n_eff:
        raise ConfigError(f"k={max(ks)} must be smaller than the effective gallery size {n_eff}")

    sims = matmul(queries, gallery.T)
    hit = valid & (query_labels[:, None] == gallery_labels[None, :])
    if method == "rank":
        ranks = _first_hit_ranks(sims, hit, valid, gallery_ids)
        recalls = [float(np.mean(ranks < k)) if nq else 0.0 for k in ks]
    elif method == "sort":
        found = _sorted_hits(sims, hit, valid, gallery_ids, max(ks))
        recalls = [float(np.mean(found[:, k - 1])) if nq else 0.0 for k in ks]
    else:
        raise ConfigError(f"unknown method {method!r}")
    return RetrievalReport(ks, recalls, nq, ng, bool(self_exclude))


def recall_on_subsets(embeddings, labels, subsets, ks):
    """Self-excluded Recall@K on several named subsets of one embedded set.

    Mirrors multi-size test protocols (small / medium / large galleries).
    """
    embeddings = as_matrix(embeddings, "embeddings")
    labels = np.asarray(labels)
    reports = {}
    for name, rows in subsets.items():
        rows = np.asarray(rows)
        rep = recall_at_k(embeddings[rows], labels[rows], embeddings[rows], labels[rows], ks, self_exclude=True)
        rep.name = name
        reports[name] = rep
    return reports


MINING_COLUMNS = ("iter", "valid_mem", "valid_batch", "mean_mem", "mean_batch")


def mining_report(stream, window=50):
    """Per-iteration valid-negative counts plus trailing-window means.

    ``stream`` yields ``(iteration, valid_from_memory, valid_from_batch)``.
    """
    if window < 1:
        raise ConfigError("window must be >= 1")
    rows = []
    mem_hist, batch_hist = [], []
    for it, vm, vb in stream:
        mem_hist.append(vm)
        batch_hist.append(vb)
        rows.append(
            {
                "iter": int(it),
                "valid_mem": int(vm),
                "valid_batch": int(vb),
                "mean_mem": float(np.mean(mem_hist[-window:])),
                "mean_batch": float(np.mean(batch_hist[-window:])),
            }
        )
    return rows


def mining_csv(rows):
    lines = [",".join(MINING_COLUMNS)]
    for r in rows:
        lines.append(f"{r['iter']},{r['valid_mem']},{r['valid_batch']},{r['mean_mem']!r},{r['mean_batch']!r}")
    return "\n".join(lines) + "\n"
