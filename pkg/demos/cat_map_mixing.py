"""Correlations of two bumps under the lift of [[2,1],[1,1]] to a step-3 nilmanifold."""
from nilflow_lab import mixing as MX

aut = MX.build_automorphism([[2, 1], [1, 1]])
print("lambda =", aut.lam, "alpha =", aut.alpha)
f, g = MX.default_bumps()
ser = MX.correlation_decay(aut, f, g, n_max=6, samples=200_000, seed=0)
for n, v, e in zip(ser.n, ser.values, ser.stderr):
    print(f"n={n:2d}  C_n={v: .3e}  se={e:.1e}")
print("window", ser.window, "rate", ser.rate, "threshold", round(ser.threshold, 3), "->", ser.verdict)
