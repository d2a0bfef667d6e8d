"""Block nilautomorphisms of the free 2-step-3 nilmanifold and their correlation decay.

The algebra is ``f23-lattice`` (basis X1, X2, Y1/2, Z1/12, Z2/12).  A matrix
A in SL(2, Z) acts as diag(A, 1, A) on first-kind coordinates; the map on
Gamma\\N is x -> second(M first(x)) followed by reduction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import sympy as sp

from ._io import write_csv
from .algebra import AlgebraError, GradedNilAlgebra, LieVector, f23_lattice
from .equidist import PeriodizedBump, _BUMP_MASS, _bump1, theoretical_exponent
from .nilmanifold import GroupElement, group_law, reduce_array, manifold_distance_array


class AutomorphismError(ValueError):
    pass


class RenormalizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadraticNumber:
    """p + q sqrt(D) with rational p, q."""
    p: Fraction
    q: Fraction
    D: int

    def __float__(self):
        return float(self.p) + float(self.q) * math.sqrt(self.D)

    def sympy(self):
        return sp.Rational(self.p.numerator, self.p.denominator) + \
            sp.Rational(self.q.numerator, self.q.denominator) * sp.sqrt(self.D)

    def digits(self, n=40):
        return sp.N(self.sympy(), n)

    def __str__(self):
        return f"{self.p} + {self.q}*sqrt({self.D})"


@dataclass
class NilAutomorphism:
    A: tuple
    alg: GradedNilAlgebra = field(repr=False)
    matrix: tuple                       # rows of Fractions, acts on first-kind coefficient vectors
    inverse: tuple
    hyperbolic: bool
    lam: QuadraticNumber | None
    alpha: QuadraticNumber | None
    brackets_ok: bool
    lattice_ok: bool

    @property
    def lam_float(self):
        return float(self.lam) if self.lam is not None else 1.0

    @property
    def V(self) -> LieVector:
        a = float(self.alpha) if self.alpha is not None else 0.0
        return self.alg.flow_vector((a,))

    def to_dict(self):
        return {"A": [list(r) for r in self.A], "matrix": [[str(v) for v in r] for r in self.matrix],
                "hyperbolic": self.hyperbolic, "lambda": None if self.lam is None else str(self.lam),
                "lambda_float": self.lam_float,
                "alpha": None if self.alpha is None else str(self.alpha),
                "alpha_float": None if self.alpha is None else float(self.alpha),
                "brackets_ok": self.brackets_ok, "lattice_ok": self.lattice_ok}


def _blockdiag(A):
    (a, b), (c, d) = A
    F = Fraction
    M = [[F(0)] * 5 for _ in range(5)]
    M[0][0], M[0][1], M[1][0], M[1][1] = F(a), F(b), F(c), F(d)
    M[2][2] = F(a * d - b * c)
    M[3][3], M[3][4], M[4][3], M[4][4] = F(a), F(b), F(c), F(d)
    return tuple(tuple(r) for r in M)


def _apply(M, v):
    return [sum(M[i][j] * v[j] for j in range(len(v))) for i in range(len(M))]


def brackets_preserved(alg, M):
    d = alg.dim
    cols = [[M[i][k] for i in range(d)] for k in range(d)]
    for i in range(d):
        for j in range(i + 1, d):
            br = alg.bracket_basis(i, j)
            lhs = _apply(M, [Fraction(br.get(k, 0)) for k in range(d)])
            rhs = alg.bracket(LieVector.exact(cols[i]), LieVector.exact(cols[j])).coeffs
            if list(lhs) != list(rhs):
                return False
    return True


def _second_of(alg, M, x):
    law = group_law(alg)
    u = law.first(x, True)
    return law.second(_apply(M, u), True)


def lattice_preserved(alg, M):
    """Images of the generators exp(e_i) have integer second-kind coordinates."""
    for i in range(alg.dim):
        e = [Fraction(int(k == i)) for k in range(alg.dim)]
        if any(c.denominator != 1 for c in _second_of(alg, M, e)):
            return False
    return True


def build_automorphism(A, alg=None) -> NilAutomorphism:
    A = tuple(tuple(int(v) for v in row) for row in A)
    if len(A) != 2 or any(len(r) != 2 for r in A):
        raise AutomorphismError("A must be 2x2")
    (a, b), (c, d) = A
    det = a * d - b * c
    if det != 1:
        raise AutomorphismError(f"det A = {det}, need 1")
    alg = alg or f23_lattice()
    M = _blockdiag(A)
    Ai = ((d, -b), (-c, a))
    Mi = _blockdiag(Ai)
    tr = a + d
    hyper = abs(tr) > 2
    lam = alpha = None
    if hyper:
        D = tr * tr - 4
        sgn = 1 if tr > 0 else -1
        lam = QuadraticNumber(Fraction(tr, 2), Fraction(sgn, 2), D)
        # A (1, alpha) = lam (1, alpha): a + b alpha = lam
        alpha = QuadraticNumber((lam.p - a) / b, lam.q / b, D)
    return NilAutomorphism(A, alg, M, Mi, hyper, lam, alpha, brackets_preserved(alg, M),
                           lattice_preserved(alg, M) and lattice_preserved(alg, Mi))


def jacobian_determinants(aut: NilAutomorphism, points):
    """Exact Jacobian determinant of x -> second(M first(x)) at rational points."""
    alg = aut.alg
    law = group_law(alg)
    d = alg.dim
    xs = sp.symbols(f"x0:{d}")
    u = law.first(list(xs), True)
    img = law.second([sum(sp.Rational(aut.matrix[i][j].numerator, aut.matrix[i][j].denominator) * u[j]
                          for j in range(d)) for i in range(d)], True)
    J = sp.Matrix(d, d, lambda i, j: sp.diff(sp.sympify(img[i]), xs[j]))
    det = sp.simplify(J.det())
    out = []
    for p in points:
        out.append(Fraction(str(det.subs(dict(zip(xs, [sp.Rational(str(v)) for v in p]))))))
    return det, out


# ---------------------------------------------------------------------------
# action on the nilmanifold


def act(aut: NilAutomorphism, x: np.ndarray, power=1) -> np.ndarray:
    """T^power on reduced points x of shape (d, M), float."""
    law = group_law(aut.alg)
    M = np.array([[float(v) for v in r] for r in (aut.matrix if power >= 0 else aut.inverse)])
    y = np.asarray(x, dtype=float)
    for _ in range(abs(power)):
        u = np.array(law.first(list(y), False))
        y = reduce_array(aut.alg, np.array(law.second(list(M @ u.reshape(u.shape[0], -1)), False))
                         .reshape(y.shape))
    return y


def act_exact(aut: NilAutomorphism, g: GroupElement) -> GroupElement:
    from .nilmanifold import _reduce
    return _reduce(aut.alg, _second_of(aut.alg, aut.matrix, list(g.to_exact().coords)), True)[0]


def _flow(alg, x, v, t):
    law = group_law(alg)
    e = law.second(list(np.asarray(v, dtype=float) * float(t)), False)
    ee = [np.full(x.shape[1], c) for c in e]
    return reduce_array(alg, np.array(law.mul(list(x), ee, False)))


def check_renormalization(aut: NilAutomorphism, x: np.ndarray, t, tol=None, V=None, lam=None):
    """sup over points of the distance between T(x exp(tV)) and T(x) exp(t lam V)."""
    if not aut.hyperbolic and V is None:
        raise AutomorphismError("no expanding direction for a non-hyperbolic automorphism")
    if V is None:
        V = aut.V
    v = V.to_float().array() if isinstance(V, LieVector) else np.asarray(V, dtype=float)
    lm = aut.lam_float if lam is None else float(lam)
    x = np.asarray(x, dtype=float)
    lhs = act(aut, _flow(aut.alg, x, v, t))
    rhs = _flow(aut.alg, act(aut, x), v, lm * t)
    err = float(manifold_distance_array(aut.alg, lhs, rhs).max()) if x.shape[1] else 0.0
    if tol is not None and err > tol:
        raise RenormalizationError(f"renormalization error {err:.3e} exceeds {tol:.1e}")
    return err


# ---------------------------------------------------------------------------
# correlations


@dataclass(frozen=True)
class ConstantObservable:
    value: float = 1.0
    kind: str = "constant"
    mean = property(lambda self: self.value)

    def evaluate(self, alg, x):
        return np.full(np.shape(x[0]), self.value)

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


def bump_inner_product(f: PeriodizedBump, g: PeriodizedBump):
    """Exact-quadrature <f, g> for zero-mean product bumps inside the unit cube."""
    from scipy import integrate
    if f.radius or g.radius:
        raise ValueError("only radius-0 bumps")
    prod = f.amplitude * g.amplitude
    for cf, wf, cg, wg in zip(f.center, f.widths, g.center, g.widths):
        lo, hi = max(cf - wf, cg - wg), min(cf + wf, cg + wg)
        if lo >= hi:
            prod = 0.0
            break
        val, _ = integrate.quad(lambda u: float(_bump1(np.array([(u - cf) / wf]))[0] *
                                                _bump1(np.array([(u - cg) / wg]))[0]), lo, hi,
                                epsabs=1e-15, epsrel=1e-13)
        prod *= val
    mf = f.raw_mean if f.subtract_mean else 0.0
    mg = g.raw_mean if g.subtract_mean else 0.0
    # int (bf - mf)(bg - mg) = int bf bg - mf int bg - mg int bf + mf mg
    return prod - mf * g.raw_mean - mg * f.raw_mean + mf * mg


def _p2(z, N):
    k = np.arange(N)
    out = np.ones(N)
    for zj in z:
        x = (k * zj % N) / N
        out *= 1 + 2 * math.pi ** 2 * (x * x - x + 1 / 6)
    return out.mean() - 1


@dataclass(frozen=True)
class LatticeRule:
    N: int
    z: tuple
    shifts: int
    seed: int

    def points(self, shift_index):
        rng = np.random.default_rng([self.seed, shift_index])
        delta = rng.random(len(self.z))
        k = np.arange(self.N)
        return np.array([((k * zj) % self.N / self.N + dj) % 1.0 for zj, dj in zip(self.z, delta)])

    def to_dict(self):
        return {"N": self.N, "z": list(self.z), "shifts": self.shifts, "seed": self.seed,
                "kind": "korobov rank-1 lattice, random shifts"}


def korobov_rule(samples, dim, shifts=16, seed=0, candidates=48):
    """Prime N near samples/shifts and the best Korobov multiplier among a fixed candidate set."""
    N = int(sp.prevprime(max(5, samples // shifts + 1)))
    rng = np.random.default_rng(12345)
    cands = sorted({int(v) for v in rng.integers(2, N - 1, size=candidates)})
    best = None
    for a in cands:
        z = [pow(a, j, N) for j in range(dim)]
        v = _p2(z, N)
        if best is None or v < best[0]:
            best = (v, tuple(z))
    return LatticeRule(N, best[1], shifts, seed)


@dataclass
class CorrelationSeries:
    n: list
    values: list
    stderr: list
    reversed_values: list
    reversed_stderr: list
    rule: LatticeRule
    rate: float | None = None
    intercept: float | None = None
    window: list = field(default_factory=list)
    threshold: float | None = None
    verdict: str = "inconclusive at budget"
    lam: float = 1.0

    def to_dict(self):
        return {"n": self.n, "values": self.values, "stderr": self.stderr,
                "reversed_values": self.reversed_values, "reversed_stderr": self.reversed_stderr,
                "rule": self.rule.to_dict(), "rate": self.rate, "intercept": self.intercept,
                "window": self.window, "threshold": self.threshold, "verdict": self.verdict,
                "lambda": self.lam, "rate_base_lambda": None if self.rate is None else
                self.rate / math.log(self.lam)}


def correlation_decay(aut: NilAutomorphism, f, g, n_max=12, samples=10 ** 6, shifts=16, seed=0,
                      block=1 << 16, margin=0.05):
    """<f o T^n, g> for n = 0..n_max by a randomly shifted lattice rule, with the fitted rate.

    Each shift gives an unbiased estimate; the standard error is the spread
    over shifts.  The fit is least squares of log|C_n| over the initial run
    of n where |C_n| exceeds three standard errors.
    """
    alg = aut.alg
    rule = korobov_rule(samples, alg.dim, shifts, seed)
    est = np.zeros((shifts, n_max + 1))
    rev = np.zeros((shifts, n_max + 1))
    for s in range(shifts):
        pts = rule.points(s)
        acc = np.zeros(n_max + 1)
        racc = np.zeros(n_max + 1)
        for b0 in range(0, rule.N, block):
            x = reduce_array(alg, pts[:, b0:b0 + block])
            gx = np.real(g.evaluate(alg, x))
            fx = np.real(f.evaluate(alg, x))
            y = x
            z = x
            for n in range(n_max + 1):
                if n:
                    y = act(aut, y)
                    z = act(aut, z, -1)
                acc[n] += math.fsum(np.real(f.evaluate(alg, y)) * gx)
                racc[n] += math.fsum(fx * np.real(g.evaluate(alg, z)))
        est[s] = acc / rule.N
        rev[s] = racc / rule.N
    vals = est.mean(axis=0)
    se = est.std(axis=0, ddof=1) / math.sqrt(shifts) if shifts > 1 else np.full(n_max + 1, np.nan)
    rvals = rev.mean(axis=0)
    rse = rev.std(axis=0, ddof=1) / math.sqrt(shifts) if shifts > 1 else np.full(n_max + 1, np.nan)
    lam = aut.lam_float
    out = CorrelationSeries(list(range(n_max + 1)), vals.tolist(), se.tolist(), rvals.tolist(),
                            rse.tolist(), rule, lam=lam)
    base = float(theoretical_exponent(alg, "f23_mixing_base"))
    out.threshold = -(base - margin) * math.log(lam) if lam > 1 else None
    window = []
    for n in range(n_max + 1):
        if abs(vals[n]) > 3 * se[n]:
            window.append(n)
        else:
            break
    out.window = window
    if len(window) >= 2 and out.threshold is not None:
        nn = np.array(window, dtype=float)
        ly = np.log(np.abs(vals[window]))
        slope, icpt = np.polyfit(nn, ly, 1)
        out.rate, out.intercept = float(slope), float(icpt)
        out.verdict = "pass" if slope <= out.threshold else "fail"
    return out


def write_correlation_csv(path, series: CorrelationSeries):
    rows = [[n, v, 0.0, e] for n, v, e in zip(series.n, series.values, series.stderr)]
    write_csv(path, ["n", "real", "imag", "stderr"], rows)


def default_bumps():
    f = PeriodizedBump((0.5,) * 5, (0.3,) * 5)
    g = PeriodizedBump((0.45, 0.55, 0.5, 0.5, 0.5), (0.3,) * 5)
    return f, g
