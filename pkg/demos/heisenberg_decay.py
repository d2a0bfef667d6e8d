"""Birkhoff averages of a zero-mean bump along a Heisenberg nilflow.

Prints |average| at dyadic times and the fitted log-log slope.
Run: python3 demos/heisenberg_decay.py [max_exponent]
"""
import sys

import numpy as np

from nilflow_lab import algebra as A
from nilflow_lab import diophantine as D
from nilflow_lab import equidist as E
from nilflow_lab import nilmanifold as NM


def main(top=16):
    h = A.heisenberg()
    alpha = D.parse_alpha("golden").values
    x_alpha = h.flow_vector(alpha)
    f = E.PeriodizedBump((0.5,) * 3, (0.3,) * 3)
    x0 = NM.GroupElement.make(h, np.random.default_rng(0).random(3).tolist(), "float")
    Ts = E.dyadic(8, top)
    series = E.birkhoff_series(h, x_alpha, f, x0, Ts)
    for T in Ts:
        print(f"T = 2^{T.bit_length() - 1:<3d} |avg| = {abs(series[T]):.3e}")
    fit = E.fit_decay(Ts, [series[T] for T in Ts], theoretical=E.theoretical_exponent(h))
    print(f"slope {fit.slope:.3f} (reference bound -{fit.theoretical})")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 16)
