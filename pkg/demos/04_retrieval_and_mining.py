"""
Recall@K and mining reports
===========================

Recall@K asks whether a same-class item appears among a query's K nearest
gallery items. This script evaluates a trained memory model at several K,
on nested gallery subsets, and summarizes its mining statistics over a
trailing window.
"""

import numpy as np

from xbm.desk import desk_config, desk_task, heldout_recall
from xbm.memory import XbmConfig
from xbm.retrieval import mining_csv, mining_report, recall_on_subsets
from xbm.train import embed, train

train_set, heldout = desk_task(1)
run = train(train_set, desk_config(1, xbm=XbmConfig(0.5)))

report = heldout_recall(run.net, train_set, heldout, ks=(1, 2, 4, 8, 16))
print(report.to_csv())

# nested galleries: more classes in the gallery make retrieval harder
emb = embed(run.net, heldout.features)
subsets = {f"{n} classes": np.flatnonzero(heldout.labels < n) for n in (20, 50, 100)}
for name, rep in recall_on_subsets(emb, heldout.labels, subsets, ks=(1,)).items():
    print(f"{name:>12}: Recall@1 {rep.recall(1):.3f} over {rep.query_count} queries")

# valid negatives from memory vs batch, with 100-iteration means
stream = [(r["iter"], r["valid_neg_mem"], r["valid_neg_batch"]) for r in run.metrics.rows if r["phase"] == "xbm"]
lines = mining_csv(mining_report(stream, window=100)).splitlines()
print("\n".join([lines[0]] + lines[1::700]))
