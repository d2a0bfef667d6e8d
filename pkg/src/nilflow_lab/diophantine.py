"""Continued fractions, simultaneous approximation counts and Diophantine evidence.

Frequencies come either as plain floats or as exact tokens (``golden``,
``sqrt2``, ``sqrt3-1``, ``root:x^3-x-1``, ``22/7``).  Exact tokens are kept as
sympy expressions; brute-force loops use a double-double representation
of them, or exact integer arithmetic when the value is rational.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import sympy as sp


class PrecisionError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# frequency vectors


@dataclass(frozen=True)
class Frequency:
    """One real number with an optional exact description."""
    value: float
    exact: object = None          # sympy expression or None
    token: str = ""

    @property
    def rational(self):
        if isinstance(self.exact, Fraction):
            return self.exact
        if self.exact is not None and getattr(self.exact, "is_rational", False):
            return Fraction(int(self.exact.p), int(self.exact.q))
        return None

    def hi_lo(self):
        if self.exact is None:
            return self.value, 0.0
        x = self.exact if not isinstance(self.exact, Fraction) else sp.Rational(self.exact.numerator,
                                                                                  self.exact.denominator)
        v = sp.N(x, 60)
        hi = float(v)
        lo = float(sp.N(v - sp.Float(hi, 60), 30))
        return hi, lo

    def digits(self, n):
        """Value to n significant digits as an exact Fraction (plus the error radius)."""
        if self.rational is not None:
            return self.rational, Fraction(0)
        if self.exact is None:
            x = Fraction(self.value)
            return x, Fraction(abs(math.ulp(self.value)), 2)
        v = sp.N(self.exact, n + 10)
        f = Fraction(str(v))
        mag = abs(f) if f != 0 else Fraction(1)
        return f, Fraction(mag) * Fraction(1, 10 ** (n))


@dataclass(frozen=True)
class FrequencyVector:
    comps: tuple

    @property
    def n(self):
        return len(self.comps)

    @property
    def values(self):
        return tuple(c.value for c in self.comps)

    def shifted(self, ints):
        out = []
        for c, k in zip(self.comps, ints):
            ex = None if c.exact is None else c.exact + k
            if isinstance(c.exact, Fraction):
                ex = c.exact + k
            out.append(Frequency(c.value + k, ex, f"{c.token}+{k}"))
        return FrequencyVector(tuple(out))

    def describe(self):
        return [c.token or repr(c.value) for c in self.comps]


_x = sp.Symbol("x")


def _token_expr(tok):
    tok = tok.strip()
    if tok.startswith("root:"):
        poly = sp.sympify(tok[5:].replace("^", "**"), locals={"x": _x})
        p = sp.Poly(poly, _x)
        roots = p.real_roots()
        if not roots:
            raise ValueError(f"{tok}: no real root")
        return roots[-1]
    body = tok.replace("^", "**")
    body = re.sub(r"\bgolden\b", "((1+sqrt(5))/2)", body)
    body = re.sub(r"\bsqrt(\d+)\b", r"sqrt(\1)", body)
    if not re.fullmatch(r"[0-9a-z()+\-*/. ]+", body):
        raise ValueError(f"cannot parse frequency token {tok!r}")
    if re.fullmatch(r"\s*-?\d+\.\d*(e-?\d+)?\s*", body):
        return None        # plain decimal: float
    return sp.sympify(body, locals={"sqrt": sp.sqrt}, rational=True)


def parse_frequency(tok) -> Frequency:
    if isinstance(tok, Frequency):
        return tok
    if isinstance(tok, Fraction):
        return Frequency(float(tok), tok, str(tok))
    if isinstance(tok, (int, float)):
        return Frequency(float(tok), None, repr(tok))
    expr = _token_expr(str(tok))
    if expr is None:
        return Frequency(float(tok), None, str(tok))
    if expr.is_rational:
        fr = Fraction(int(expr.p), int(expr.q))
        return Frequency(float(fr), fr, str(tok))
    return Frequency(float(sp.N(expr, 30)), expr, str(tok))


def parse_alpha(spec) -> FrequencyVector:
    """Comma-separated tokens (or a sequence of tokens / floats)."""
    if isinstance(spec, FrequencyVector):
        return spec
    if isinstance(spec, str):
        toks = [t for t in spec.split(",") if t.strip()]
    elif isinstance(spec, (int, float, Fraction)):
        toks = [spec]
    else:
        toks = list(spec)
    return FrequencyVector(tuple(parse_frequency(t) for t in toks))


# ---------------------------------------------------------------------------
# continued fractions


def _cf_fraction(x: Fraction, depth=None):
    out = []
    while True:
        a = math.floor(x)
        out.append(int(a))
        x = x - a
        if x == 0 or (depth is not None and len(out) >= depth):
            return out
        x = 1 / x


def continued_fraction(x, depth=20):
    """Partial quotients [a0; a1, ...].

    Rationals (Fraction/int) expand exactly and terminate.  Exact tokens are
    evaluated with enough digits that every returned quotient is certified
    (common prefix of the expansions of both ends of an enclosing interval).
    Plain floats are treated the same way with the interval of one ulp; asking
    for more quotients than that interval supports raises PrecisionError.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if isinstance(x, (int, Fraction)):
        return _cf_fraction(Fraction(x), depth)
    f = parse_frequency(x)
    if f.rational is not None:
        return _cf_fraction(f.rational, depth)
    if f.exact is None:
        c = Fraction(f.value)
        rad = Fraction(math.ulp(f.value)) / 2
        got = _common_prefix(c - rad, c + rad, depth)
        if len(got) < depth:
            raise PrecisionError(
                f"float input supports only {len(got)} certified partial quotients; "
                "pass an exact token for more")
        return got
    digits = max(30, 3 * depth)
    for _ in range(8):
        c, rad = f.digits(digits)
        got = _common_prefix(c - rad, c + rad, depth)
        if len(got) >= depth:
            return got
        digits *= 2
    raise PrecisionError("could not certify the requested depth")


def _common_prefix(lo: Fraction, hi: Fraction, depth):
    out = []
    while len(out) < depth:
        a, b = math.floor(lo), math.floor(hi)
        if a != b:
            break
        out.append(int(a))
        lo, hi = lo - a, hi - a
        if lo == 0 or hi == 0:
            break
        lo, hi = 1 / hi, 1 / lo
    return out


def convergents(quotients):
    """(p_n, q_n) for the given partial quotients."""
    p0, q0, p1, q1 = 1, 0, quotients[0], 1
    out = [(p1, q1)]
    for a in quotients[1:]:
        p0, q0, p1, q1 = p1, q1, a * p1 + p0, a * q1 + q0
        out.append((p1, q1))
    return out


def convergent_denominators(x, limit):
    """Denominators q_n <= limit of the convergents of x."""
    depth = 8
    while True:
        try:
            qs = [q for _, q in convergents(continued_fraction(x, depth))]
        except PrecisionError:
            qs = [q for _, q in convergents(continued_fraction(x, depth - 1))]
            return [q for q in qs if q <= limit]
        f = parse_frequency(x) if not isinstance(x, (int, Fraction)) else None
        rational = isinstance(x, (int, Fraction)) or (f is not None and f.rational is not None)
        if qs[-1] > limit or rational:
            return sorted({q for q in qs if q <= limit})
        depth *= 2


# ---------------------------------------------------------------------------
# fractional parts


def _split(a):
    c = 134217729.0 * a
    hi = c - (c - a)
    return hi, a - hi


def signed_frac(r, f: Frequency):
    """r*alpha minus the nearest integer, for integer arrays r (|r| < 2^50).

    Rational frequencies use exact integer arithmetic.  Irrational ones use a
    double-double product, so the absolute error stays near 1e-16 instead of
    growing with r.
    """
    r = np.asarray(r, dtype=np.int64)
    q = f.rational
    if q is not None:
        p, d = q.numerator, q.denominator
        if abs(p) < 2 ** 31 and d < 2 ** 31 and (r.size == 0 or np.abs(r).max() < 2 ** 31):
            m = (r * (p % d)) % d
            m = np.where(2 * m > d, m - d, m)
            return m / d
        out = []
        for rv in r.ravel().tolist():
            m = (rv * p) % d
            if 2 * m > d:
                m -= d
            out.append(float(Fraction(m, d)))
        return np.array(out).reshape(r.shape)
    hi, lo = f.hi_lo()
    rf = r.astype(float)
    p = rf * hi
    ah, al = _split(rf)
    bh, bl = _split(np.float64(hi))
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    s = (p - np.round(p)) + (e + rf * lo)
    return s - np.round(s)


def frac_error_budget(f: Frequency, rmax):
    if f.rational is not None:
        return 0.0
    if f.exact is None:
        return 0.0
    return 4e-16 + rmax * 1e-31


# ---------------------------------------------------------------------------
# counting


@dataclass
class CountReport:
    N: int
    delta: float
    count: int
    bound: float | None = None
    ratio: float | None = None
    C: float | None = None
    ambiguous: int = 0

    def row(self):
        return [self.N, self.delta, self.count, self.bound, self.ratio]


def _default_sigma(n, sigma):
    if sigma is None:
        return [1.0 / n] * n
    if len(sigma) != n:
        raise ValueError("sigma must have one entry per frequency")
    return [float(s) for s in sigma]


def scaled_distances(alpha, rmax, sigma=None, cap=0.5):
    """m(r) = max_i min(|r alpha_i|, cap)^(1/sigma_i) for r = 1..rmax, plus the error budget."""
    alpha = parse_alpha(alpha)
    sig = _default_sigma(alpha.n, sigma)
    r = np.arange(1, rmax + 1, dtype=np.int64)
    m = np.zeros(rmax)
    budget = 0.0
    for f, s in zip(alpha.comps, sig):
        d = np.minimum(np.abs(signed_frac(r, f)), cap)
        m = np.maximum(m, d ** (1.0 / s))
        budget = max(budget, frac_error_budget(f, rmax) / s)
    return m, budget


def bound_value(N, delta, nu):
    return max(N ** (1 - 1 / nu), N * delta)


def count_R(alpha, N, delta, sigma=None, nu=None, C=None, cap=0.5):
    """#{r in [-N, N] : |r alpha_i| <= delta^sigma_i for all i}, brute force."""
    m, budget = scaled_distances(alpha, N, sigma, cap)
    sig = _default_sigma(parse_alpha(alpha).n, sigma)
    if all(delta ** s >= cap for s in sig):
        cnt = 2 * N + 1
        amb = 0
    else:
        cnt = 1 + 2 * int(np.count_nonzero(m <= delta))
        amb = int(np.count_nonzero(np.abs(m - delta) <= budget * 4)) if budget else 0
    rep = CountReport(N, float(delta), cnt, ambiguous=amb)
    if nu is not None:
        b = bound_value(N, delta, nu)
        rep.ratio = cnt / b
        rep.bound = b if C is None else C * b
        rep.C = C
    return rep


def count_grid(alpha, N_grid, delta_grid, sigma=None, nu=1.0, cap=0.5):
    """CountReports for every (N, delta); distances computed once up to max N."""
    N_grid = sorted(int(n) for n in N_grid)
    m, budget = scaled_distances(alpha, N_grid[-1], sigma, cap)
    sig = _default_sigma(parse_alpha(alpha).n, sigma)
    out = []
    for N in N_grid:
        srt = np.sort(m[:N])
        for dl in delta_grid:
            if all(dl ** s >= cap for s in sig):
                cnt = 2 * N + 1
            else:
                cnt = 1 + 2 * int(np.searchsorted(srt, dl, side="right"))
            amb = 0
            if budget:
                amb = int(np.searchsorted(srt, dl + 4 * budget, side="right")
                          - np.searchsorted(srt, dl - 4 * budget, side="left"))
            b = bound_value(N, dl, nu)
            out.append(CountReport(N, float(dl), cnt, b, cnt / b, ambiguous=amb))
    return out


@dataclass
class LowerBound:
    minimum: float
    argmin: int
    nu: float
    constant: float
    convergent_minimum: float | None = None
    convergent_argmin: int | None = None
    nu_effective: float | None = None


def dio_lower_bound(alpha, r_max, nu=1.0, with_convergents=True):
    """min over 1 <= r <= r_max of r^nu * max_i |r alpha_i|, with the minimiser."""
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    alpha = parse_alpha(alpha)
    r = np.arange(1, r_max + 1, dtype=np.int64)
    d = np.zeros(r_max)
    for f in alpha.comps:
        d = np.maximum(d, np.abs(signed_frac(r, f)))
    rf = r.astype(float)
    vals = rf ** nu * d
    i = int(np.argmin(vals))
    with np.errstate(divide="ignore"):
        lo = min(100, r_max - 1)
        eff = -np.log(d[lo:]) / np.log(rf[lo:]) if r_max > 1 else np.array([])
    out = LowerBound(float(vals[i]), int(r[i]), float(nu), float(vals[i]),
                     nu_effective=float(np.max(eff)) if len(eff) else None)
    if with_convergents and alpha.n == 1:
        c = alpha.comps[0]
        src = c.rational if c.rational is not None else (c.token if c.exact is not None else c.value)
        try:
            qs = convergent_denominators(src, r_max)
        except PrecisionError:
            qs = []
        qs = [q for q in qs if 1 <= q <= r_max]
        if qs:
            cv = vals[np.array(qs) - 1]
            j = int(np.argmin(cv))
            out.convergent_minimum = float(cv[j])
            out.convergent_argmin = int(qs[j])
    return out


# ---------------------------------------------------------------------------
# evidence


@dataclass
class MembershipEvidence:
    nu: float
    C: float
    verdict: str
    max_ratio_slope: float
    grid: list = field(default_factory=list)
    ambiguous: int = 0
    conditions: dict = field(default_factory=dict)

    def to_dict(self):
        return {"nu": self.nu, "C": self.C, "verdict": self.verdict,
                "max_ratio_slope": self.max_ratio_slope, "ambiguous": self.ambiguous,
                "conditions": self.conditions}


def membership_evidence(alpha, nu, N_grid, delta_grid, sigma=None, step=None, slope_limit=0.25):
    """Finite-scale evidence for the counting bound with exponent nu.

    C is the largest count/bound ratio over the grid.  For each delta the
    log-log slope of the ratio against N is measured; a clearly growing ratio
    (slope above ``slope_limit``) means no uniform constant exists at this
    scale and the verdict is "inconsistent".  A verdict is never a proof.
    """
    grid = count_grid(alpha, N_grid, delta_grid, sigma, nu)
    C = max(r.ratio for r in grid)
    n = parse_alpha(alpha).n
    nmax = max(int(v) for v in N_grid)
    # rows below the equidistribution resolution: an irrational vector is
    # expected to have (almost) no nonzero r there, a rational one has all
    # multiples of its denominator
    deep = [dl for dl in delta_grid if 2 ** (n + 1) * nmax * dl <= 1] or [min(delta_grid)]
    slopes = []
    for dl in deep:
        rows = [r for r in grid if r.delta == float(dl)]
        if len(rows) < 3:
            continue
        x = np.log([r.N for r in rows])
        y = np.log([r.ratio for r in rows])
        h = len(rows) // 2
        slopes.append(float(np.polyfit(x[h:], y[h:], 1)[0]))
    smax = max(slopes) if slopes else 0.0
    verdict = "consistent at scale" if smax <= slope_limit and math.isfinite(C) else "inconsistent"
    cond = {"nu_at_least_1": nu >= 1}
    if step is not None:
        cond["nu_at_most_k_over_2"] = nu <= step / 2
    return MembershipEvidence(float(nu), float(C), verdict, smax, grid,
                              sum(r.ambiguous for r in grid), cond)


def write_count_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "delta", "count", "bound", "ratio"])
        for r in reports:
            w.writerow([r.N, _g(r.delta), r.count, _g(r.bound), _g(r.ratio)])


def _g(v):
    return "" if v is None else format(float(v), ".17g")
