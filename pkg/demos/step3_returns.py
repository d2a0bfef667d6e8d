"""Dyadic return counts and average inverse width on the step-3 triangular nilmanifold."""
import numpy as np

from nilflow_lab import algebra as A
from nilflow_lab import nilmanifold as NM
from nilflow_lab import width as W

alg = A.triangular(3)
x = NM.GroupElement.make(alg, np.random.default_rng(0).random(6).tolist(), "float")
recs = []
for t in (1.0, 2.0, 3.0):
    recs.append(W.step3_width(alg, "sqrt2-1,sqrt3-1", x, 5000, t, profile=False))
    recs.append(W.step3_width(alg, "sqrt2-1,sqrt3-1", x, 20, t, n_max=-1))
fit = W.step3_fit(recs)
for t, n, cnt, ref, lim in fit.count_cells:
    print(f"t={t:.0f} n={n} count={cnt:5d} allowed={lim:9.1f}")
for t, avg, lim in fit.width_cells:
    print(f"t={t:.0f} avg 1/w={avg:10.1f} <= {lim:10.1f}")
