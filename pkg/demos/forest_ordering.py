"""Robustness ordering of tree ensembles under gaussian threshold noise.

At a fixed depth, four models of the same family are swept under the same
device variation: a single hard tree, its soft version, a bagged forest of
hard trees, and the soft forest built from it. Averaging over trees already
buys robustness; soft boundaries buy more; together they are nearly immune.
Expected ordering of accuracy drops: SRF <= SDT < RF < DT.

Uses 20 trees at depth 16 to keep the runtime in minutes; the effect only
strengthens with more trees.
"""

import time

from camforest import (accuracy_dt, accuracy_rf, accuracy_sdt, accuracy_srf,
                       init_sdt, init_srf, prepared, train_dt, train_rf,
                       train_sdt_staged)
from camforest.datasets import split
from camforest.robust import variation_sweep

train_full, test_full = prepared("mnist")
train = split(train_full, 10000 / train_full.n_samples, seed=0)[1]
test = split(test_full, 2000 / test_full.n_samples, seed=0)[1]

depth, n_trees = 16, 20
t0 = time.time()
dt = train_dt(train, depth)
rf = train_rf(train, n_trees, depth, seed=0)
sdt = train_sdt_staged(init_sdt(dt), train,
                       ((5.0, 5.0, 5), (10.0, 8.0, 5), (20.0, 10.0, 10)),
                       seed=1)
srf = init_srf(rf)    # soft boundaries on the bagged structure, no retrain
print(f"trained depth-{depth} models ({n_trees}-tree forests) "
      f"in {time.time() - t0:.0f}s\n")

models = [("DT", dt, accuracy_dt(dt, test)),
          ("SDT", sdt, accuracy_sdt(sdt, test)),
          ("RF", rf, accuracy_rf(rf, test)),
          ("SRF", srf, accuracy_srf(srf, test))]

reports = variation_sweep([(n, m) for n, m, _ in models], test, [0.1],
                          kind="gaussian", trials=10, seed=0)
print(f"{'model':6s} {'clean':>8s} {'noisy mean':>11s} {'drop (pts)':>11s}")
for (name, _, clean), rep in zip(models, reports):
    print(f"{name:6s} {clean:8.4f} {rep.mean:11.4f} "
          f"{100 * (clean - rep.mean):11.2f}")
