"""
How fast do embeddings move?
============================

A memory only helps if stored embeddings stay close to what the current
network would produce. Here we train the baseline and measure, on a fixed
probe set, how far embeddings move over 10, 100 and 1000 iterations, then
check how stale embeddings affect a single-pair gradient.
"""

import numpy as np

from xbm.desk import desk_config, desk_task
from xbm.drift import drift_experiment, drift_schedule, lemma_experiment
from xbm.train import embed

train_set, _ = desk_task(0)
config = desk_config(0)
steps = (10, 100, 1000)
records, result = drift_experiment(train_set, config, steps, drift_schedule(config.iterations, steps, every=250))

print("   t   " + "".join(f"dt={dt:<8}" for dt in steps))
for t in sorted({r.t for r in records}):
    row = {r.delta_t: r.mean_drift for r in records if r.t == t}
    print(f"{t:5d}  " + "".join(f"{row[dt]:<11.2e}" for dt in steps))
print(f"(learning rate drops by {config.lr_decay_factor} at t={config.lr_decay_at[0]})")

# the single-pair gradient error grows with the squared distance to the stale copy
x_i = train_set.features[0]
other = int(np.flatnonzero(train_set.labels != train_set.labels[0])[0])
v_j = embed(result.net, train_set.features[other : other + 1])[0]
checks = lemma_experiment(result.net, x_i, v_j, trials=200, seed=0)
ratios = np.array([c.ratio for c in checks])
print(f"gradient error / squared staleness over {len(checks)} perturbations: max {ratios.max():.3f}, median {np.median(ratios):.3f}")
