"""Observables, Birkhoff averages, Weyl sums, box discrepancy and decay fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import integrate

from ._exact import as_fraction
from ._io import gnuplot_script
from .algebra import AlgebraError, LieVector, check_transversality, generic_alpha, scaling_data
from .nilmanifold import (GroupElement, SectionPoint, group_law, lift_along, orbit_unit_points,
                          return_map_unreduced)


class ObservableError(ValueError):
    pass


class BudgetError(ValueError):
    pass


class FitError(ValueError):
    pass


TWO_PI = 2 * math.pi


# ---------------------------------------------------------------------------
# observables


def _bump1(u):
    out = np.zeros_like(u, dtype=float)
    inside = np.abs(u) < 1
    v = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - v * v))
    return out


_BUMP_MASS = integrate.quad(lambda u: math.exp(-1.0 / (1.0 - u * u)), -1, 1, epsabs=1e-14, epsrel=1e-14)


@dataclass(frozen=True)
class ToralCharacter:
    """exp(2 pi i <m, pr1(x)>) on the first-layer coordinates."""
    m: tuple
    kind: str = "toral_character"

    @property
    def mean(self):
        return 0.0 if any(self.m) else 1.0

    @property
    def zero_mean(self):
        return any(self.m)

    def evaluate(self, alg, x):
        idx = [i for i in range(alg.dim) if alg.layers[i] == 1]
        if len(idx) != len(self.m):
            raise ObservableError(f"character needs {len(idx)} integers")
        phase = sum(mi * x[i] for mi, i in zip(self.m, idx))
        return np.exp(1j * TWO_PI * phase)

    def to_dict(self):
        return {"kind": self.kind, "m": list(self.m), "zero_mean": self.zero_mean}


@dataclass(frozen=True)
class PeriodizedBump:
    """Product bump in second-kind coordinates of the fundamental domain, mean removed.

    b(x) = prod_i phi((x_i - c_i) / w_i), phi(u) = exp(-1/(1-u^2)).  When the
    support box sits inside the open unit cube, the Gamma-periodisation has
    exactly one nonzero term on the fundamental domain (radius 0).  Otherwise
    the lattice words with |n_i| <= radius are summed.
    """
    center: tuple
    widths: tuple
    radius: int = 0
    amplitude: float = 1.0
    subtract_mean: bool = True
    kind: str = "periodized_bump"

    def __post_init__(self):
        for c, w in zip(self.center, self.widths):
            if w <= 0:
                raise ObservableError("bump widths must be positive")
            if c - w < -self.radius or c + w > 1 + self.radius:
                raise ObservableError("bump support leaves the periodisation range; raise radius")

    @property
    def raw_mean(self):
        return self.amplitude * float(np.prod([w * _BUMP_MASS[0] for w in self.widths]))

    @property
    def mean_error(self):
        return self.amplitude * len(self.widths) * _BUMP_MASS[1]

    @property
    def mean(self):
        return 0.0 if self.subtract_mean else self.raw_mean

    @property
    def zero_mean(self):
        return self.subtract_mean

    def _raw(self, x):
        out = self.amplitude
        for xi, c, w in zip(x, self.center, self.widths):
            out = out * _bump1((np.asarray(xi) - c) / w)
        return out

    def evaluate(self, alg, x):
        x = [np.asarray(c, dtype=float) for c in x]
        if self.radius == 0:
            val = self._raw(x)
        else:
            import itertools
            law = group_law(alg)
            val = 0.0
            rng = range(-self.radius, self.radius + 1)
            for word in itertools.product(rng, repeat=alg.dim):
                y = law.mul([float(n) for n in word], x, False)
                val = val + self._raw(y)
        return val - (self.raw_mean if self.subtract_mean else 0.0)

    def to_dict(self):
        return {"kind": self.kind, "center": list(self.center), "widths": list(self.widths),
                "radius": self.radius, "raw_mean": self.raw_mean, "mean_error": self.mean_error,
                "zero_mean": self.zero_mean}


@dataclass(frozen=True)
class ReturnPhase:
    """Section-level phase exp(2 pi i <m, p_r>) at integer return times.

    p_r are the second-kind coordinates of the non-xi part of
    exp(theta xi) exp(S) exp(r X) before lattice reduction; they are
    polynomials in r, so Birkhoff sums of this observable are generalised
    Weyl sums.  This is not a function on M.
    """
    m: tuple
    kind: str = "return_phase"
    zero_mean: bool = True

    def to_dict(self):
        return {"kind": self.kind, "m": list(self.m)}


def return_phase_polynomial(alg, p: SectionPoint, x_alpha: LieVector, m):
    """Exact coefficients c_0..c_k of r -> <m, p_r>."""
    k = alg.step
    if len(m) != len(alg.ideal):
        raise ObservableError(f"return_phase needs {len(alg.ideal)} integers")
    pts = []
    for r in range(k + 2):
        g = return_map_unreduced(alg, p, x_alpha, r)
        pts.append(sum(Fraction(mi) * g.coords[i] for mi, i in zip(m, alg.ideal)))
    coeffs = _interpolate(list(range(k + 1)), pts[: k + 1])
    if _poly_eval(coeffs, k + 1) != pts[k + 1]:
        raise ObservableError("phase is not a polynomial of degree <= step")
    return coeffs


def _interpolate(xs, ys):
    n = len(xs)
    coeffs = [Fraction(0)] * n
    for i in range(n):
        basis = [Fraction(1)]
        denom = Fraction(1)
        for j in range(n):
            if j == i:
                continue
            basis = [Fraction(0)] + basis
            for t in range(len(basis) - 1):
                basis[t] -= xs[j] * basis[t + 1]
            denom *= xs[i] - xs[j]
        for t in range(n):
            coeffs[t] += ys[i] * basis[t] / denom
    return coeffs


def _poly_eval(coeffs, r):
    return sum(c * r ** j for j, c in enumerate(coeffs))


# ---------------------------------------------------------------------------
# Weyl sums


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _dd_add_mod1(ah, al, bh, bl):
    s, e = _two_sum(ah, bh)
    e = e + al + bl
    hi, lo = _two_sum(s, e)
    n = np.round(hi)
    hi = hi - n
    return _two_sum(hi, lo)


def _dd(fr):
    hi = float(fr)
    return hi, float(fr - Fraction(hi))


def _frac_mod1(fr: Fraction):
    return fr - math.floor(fr)


def weyl_partial_sums(coeffs, N, block=1024, record=None):
    """sum_{r<N} e(P(r)) and partial sums at the requested N values.

    P(r) = sum_j c_j r^j with real (float or Fraction) coefficients, taken as
    exact rationals.  The sum is split into blocks; each block restarts from
    the exact difference table of P at its first point (mod 1), and inside a
    block the table advances by double-double additions renormalised mod 1.
    All blocks advance together and block sums merge with compensated
    summation in block order.
    """
    if N < 0:
        raise ValueError("N must be nonnegative")
    if N > 2 ** 33:
        raise ValueError("N above 2^33 is not supported")
    cs = [as_fraction(c) for c in coeffs]
    while len(cs) > 1 and cs[-1] == 0:
        cs.pop()
    k = len(cs) - 1
    if N == 0:
        return 0j, {}
    nb = -(-N // block)
    tables = [[], []]
    for b in range(nb):
        r0 = b * block
        vals = [_frac_mod1(_poly_eval(cs, r0 + i)) for i in range(k + 1)]
        diffs = []
        cur = vals
        for j in range(k + 1):
            diffs.append(_frac_mod1(cur[0]))
            cur = [cur[i + 1] - cur[i] for i in range(len(cur) - 1)]
        his, los = zip(*(_dd(d) for d in diffs))
        tables[0].append(his)
        tables[1].append(los)
    hi = np.array(tables[0]).T.copy()        # (k+1, nb)
    lo = np.array(tables[1]).T.copy()
    sums = np.zeros(nb, dtype=complex)
    steps = min(block, N)
    pos = np.arange(nb) * block
    for i in range(steps):
        z = np.exp(1j * TWO_PI * (hi[0] + lo[0]))
        sums += np.where(pos + i < N, z, 0)
        for j in range(k):
            hi[j], lo[j] = _dd_add_mod1(hi[j], lo[j], hi[j + 1], lo[j + 1])
    total = complex(math.fsum(sums.real), math.fsum(sums.imag))
    cum = {}
    for n in record or []:
        if n % block == 0 and n <= N:
            part = sums[: n // block]
            cum[n] = complex(math.fsum(part.real), math.fsum(part.imag))
        else:
            cum[n] = weyl_partial_sums(cs, n, block)[0]
    return total, cum


def weyl_sum(coeffs, N, block=1024):
    """(1/N) sum_{r<N} e(P(r)); P given by coefficients c_0..c_k."""
    if N == 0:
        return 0j
    total, _ = weyl_partial_sums(coeffs, N, block)
    return total / N


def weyl_series(coeffs, N_values, block=1024):
    """Normalised Weyl sums at several N from one pass."""
    N_values = sorted(int(n) for n in N_values)
    _, cum = weyl_partial_sums(coeffs, N_values[-1], block, record=N_values)
    return {n: cum[n] / n for n in N_values}


def weyl_sum_direct(coeffs, N):
    """Oracle: exact phases mod 1 with Python integers, float exponentials."""
    cs = [as_fraction(c) for c in coeffs]
    den = 1
    for c in cs:
        den = den * c.denominator // math.gcd(den, c.denominator)
    nums = [int(c * den) for c in cs]
    tot_re, tot_im = [], []
    for r in range(N):
        v = 0
        for c in reversed(nums):
            v = v * r + c
        ph = (v % den) / den
        tot_re.append(math.cos(TWO_PI * ph))
        tot_im.append(math.sin(TWO_PI * ph))
    return complex(math.fsum(tot_re), math.fsum(tot_im)) / N


# ---------------------------------------------------------------------------
# Birkhoff averages


def _unit_integrals(alg, x_alpha, f, x0: GroupElement, n_units, m, chunk=2048):
    """Trapezoid integrals of f over [r, r+1] for r < n_units, m sub-intervals each."""
    pts = orbit_unit_points(alg, x0, x_alpha, n_units)
    u = np.linspace(0.0, 1.0, m + 1)
    w = np.full(m + 1, 1.0 / m)
    w[0] = w[-1] = 0.5 / m
    out = np.zeros(n_units, dtype=complex)
    for s in range(0, n_units, chunk):
        y = lift_along(alg, pts[:, s:s + chunk], x_alpha, u)
        vals = np.asarray(f.evaluate(alg, y))
        out[s:s + chunk] = vals @ w
    return out


def birkhoff_series(alg, x_alpha: LieVector, f, x0: GroupElement, T_values, dt=1 / 64):
    """Averages (1/T) int_0^T f(x0 exp(tX)) dt at integer T values (one pass).

    For a ReturnPhase observable the average is (1/T) sum_{r<T} over integer
    return times instead, computed as a Weyl sum.
    """
    T_values = sorted(int(t) for t in T_values)
    if isinstance(f, ReturnPhase):
        raise ObservableError("use return_phase_series for section observables")
    m = round(1 / dt)
    if abs(m * dt - 1) > 1e-12:
        raise ValueError("dt must divide the unit return time")
    ints = _unit_integrals(alg, x_alpha, f, x0, T_values[-1], m)
    out = {}
    for T in T_values:
        seg = ints[:T]
        out[T] = complex(math.fsum(seg.real), math.fsum(seg.imag)) / T
    return out


def birkhoff_average(alg, x_alpha: LieVector, f, x0: GroupElement, T, dt=1 / 64):
    """(1/T) int_0^T f(x0 exp(tX)) dt by the trapezoid rule with step dt."""
    if T <= 0:
        raise ValueError("T must be positive")
    n = T / dt
    if abs(n - round(n)) > 1e-9:
        raise ValueError("dt must divide T")
    full = int(math.floor(T + 1e-12))
    rest = T - full
    total = 0j
    if full:
        total += birkhoff_series(alg, x_alpha, f, x0, [full], dt)[full] * full
    if rest > 1e-12:
        from .nilmanifold import flow_step
        start = flow_step(x0.to_float(), x_alpha, float(full))
        k = round(rest / dt)
        u = np.linspace(0.0, rest, k + 1)
        y = lift_along(alg, start.array()[:, None], x_alpha, u)
        vals = np.asarray(f.evaluate(alg, y))[0]
        wts = np.full(k + 1, dt)
        wts[0] = wts[-1] = dt / 2
        total += complex(np.sum(vals * wts))
    return total / T


def toral_character_closed_form(alg, x_alpha: LieVector, f: ToralCharacter, x0: GroupElement, T):
    idx = [i for i in range(alg.dim) if alg.layers[i] == 1]
    w = sum(mi * float(x_alpha[i]) for mi, i in zip(f.m, idx))
    p0 = sum(mi * float(x0.coords[i]) for mi, i in zip(f.m, idx))
    if w == 0:
        return np.exp(1j * TWO_PI * p0)
    return np.exp(1j * TWO_PI * p0) * (np.exp(1j * TWO_PI * w * T) - 1) / (1j * TWO_PI * w * T)


def return_phase_series(alg, x_alpha, f: ReturnPhase, p: SectionPoint, N_values, block=1024):
    coeffs = return_phase_polynomial(alg, p, x_alpha, f.m)
    return weyl_series(coeffs, N_values, block), coeffs


# ---------------------------------------------------------------------------
# discrepancy


@dataclass
class DiscrepancyReport:
    levels: list
    per_level: list
    value: float


def discrepancy(points, depth, budget=2 ** 24):
    """Max over dyadic boxes of |empirical - Lebesgue| at each level 1..depth."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 1 and pts.shape[1] > 1 and np.ndim(points) == 1:
        pts = pts.T
    n, d = pts.shape
    if depth < 1 or depth > 8:
        raise BudgetError("depth must be in 1..8")
    if 2 ** (depth * d) > budget:
        raise BudgetError(f"{2 ** (depth * d)} boxes exceed the budget of {budget}")
    per = []
    for lev in range(1, depth + 1):
        side = 2 ** lev
        idx = np.minimum((pts * side).astype(np.int64), side - 1)
        flat = np.ravel_multi_index(idx.T, (side,) * d)
        counts = np.bincount(flat, minlength=side ** d)
        vol = 1.0 / side ** d
        per.append(float(np.max(np.abs(counts / n - vol))))
    return DiscrepancyReport(list(range(1, depth + 1)), per, max(per))


# ---------------------------------------------------------------------------
# decay fits


@dataclass
class DecayFit:
    T: list
    values: list
    window: tuple
    slope: float
    intercept: float
    residual: float
    slope_stderr: float
    excluded: list = field(default_factory=list)
    theoretical: Fraction | None = None
    theoretical_mode: str = ""

    def to_dict(self):
        return {"series": [[t, v] for t, v in zip(self.T, self.values)],
                "window": list(self.window), "slope": self.slope, "intercept": self.intercept,
                "residual": self.residual, "slope_stderr": self.slope_stderr,
                "excluded": self.excluded,
                "theoretical_exponent": None if self.theoretical is None else str(self.theoretical),
                "theoretical_slope": None if self.theoretical is None else -float(self.theoretical),
                "theoretical_mode": self.theoretical_mode}


NOISE_FLOOR = 1e-15


def fit_decay(T, values, window=None, theoretical=None, mode=""):
    """Least-squares slope of log|A| against log T over the window."""
    T = [float(t) for t in T]
    vals = [abs(complex(v)) for v in values]
    lo, hi = window if window is not None else (min(T), max(T))
    sel = [(t, v) for t, v in zip(T, vals) if lo <= t <= hi]
    excluded = [t for t, v in sel if v <= NOISE_FLOOR]
    sel = [(t, v) for t, v in sel if v > NOISE_FLOOR]
    if len(sel) < 5:
        raise FitError(f"need at least 5 points in the window, have {len(sel)}")
    x = np.log([t for t, _ in sel])
    y = np.log([v for _, v in sel])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), res, _, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    rms = float(np.sqrt(np.mean(resid ** 2)))
    dof = max(len(x) - 2, 1)
    se = float(np.sqrt(np.sum(resid ** 2) / dof / np.sum((x - x.mean()) ** 2)))
    return DecayFit([t for t, _ in sel], [v for _, v in sel], (lo, hi), float(slope), float(icpt),
                    rms, se, excluded, theoretical, mode)


def dyadic(lo_exp, hi_exp):
    return [2 ** j for j in range(lo_exp, hi_exp + 1)]


# ---------------------------------------------------------------------------
# predicted exponents


def theoretical_exponent(alg, mode="main", x_alpha=None):
    """Predicted decay exponent as an exact rational.

    main:             1/(3 S), S the degree sum; needs transversality
    step3_uniform:    1/12 on the step-3 triangular algebra
    f23_mixing_base:  1/6 on the free 2-generator step-3 algebra
    """
    if mode == "main":
        if x_alpha is None:
            x_alpha = alg.flow_vector(generic_alpha(alg))
        rep = check_transversality(alg, x_alpha)
        if not rep.verdict:
            raise AlgebraError(f"{alg.name} fails transversality; the main exponent does not apply")
        return scaling_data(alg, x_alpha).exponent
    if mode == "step3_uniform":
        if alg.name != "triangular:3":
            raise AlgebraError("step3_uniform applies to triangular:3 only")
        return Fraction(1, 12)
    if mode == "f23_mixing_base":
        if alg.name not in ("free:2:3", "f23-lattice"):
            raise AlgebraError("f23_mixing_base applies to the free 2-generator step-3 algebra")
        return Fraction(1, 6)
    raise ValueError(f"unknown mode {mode!r}")


def decay_plot_script(fit: DecayFit, title="decay"):
    rows = [[t, v] for t, v in zip(fit.T, fit.values)]
    plots = ["$data using 1:2 with linespoints title 'measured'",
             f"exp({fit.intercept!r}) * x**({fit.slope!r}) title 'fit slope {fit.slope:.4f}'"]
    if fit.theoretical is not None:
        s = -float(fit.theoretical)
        t0, v0 = rows[0]
        plots.append(f"{v0!r} * (x/{t0!r})**({s!r}) dashtype 2 title 'reference slope {s:.5f}'")
    return gnuplot_script(title, {"data": rows}, plots, "T", "|average|", logx=True, logy=True)
