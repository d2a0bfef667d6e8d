"""Close returns on the Heisenberg nilmanifold for the golden frequency.

Return indices land on Fibonacci numbers; the width bound drops below
its extremal value (I/2)^a once they show up.
"""
import numpy as np

from nilflow_lab import algebra as A
from nilflow_lab import nilmanifold as NM
from nilflow_lab import width as W

h = A.heisenberg()
x = NM.GroupElement.make(h, np.random.default_rng(0).random(3).tolist(), "float")
for T, L in [(1, 50), (5, 1000), (5, 20000)]:
    rep = W.width_lower_bound(h, "(sqrt5-1)/2", x, T, L, samples_per_unit=4)
    rs = sorted({abs(e.r) for e in rep.events})
    print(f"T={T} L={L}: returns {rs}  w={rep.w:.4g}  cases {rep.case_fractions}")
