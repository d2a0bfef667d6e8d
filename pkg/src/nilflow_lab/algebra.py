"""Exact arithmetic on graded nilpotent Lie algebras.

An algebra is a basis with layer tags, a set of generator indices, a
distinguished generator ``xi`` and a sparse table of rational structure
constants ``[e_a, e_b] = sum_c c_ab^c e_c``.  The basis is always ordered by
layer, so every bracket lands strictly later in the basis; that is what makes
the coordinates of the second kind and the lattice reduction work.

Built-ins are addressed by name::

    heisenberg
    filiform:<k>
    triangular:<k>     strictly upper triangular (k+1)x(k+1) matrices
    free:<g>:<s>       free nilpotent, g generators, step s, Hall basis
    f23-lattice        free:2:3 in the rescaled basis X1, X2, Y1/2, Z1/12, Z2/12
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import product
from pathlib import Path

import numpy as np

from ._exact import as_fraction, complement, nullspace, rank, rref


class AlgebraError(ValueError):
    pass


class FlavorError(TypeError):
    pass


class JacobiError(AlgebraError):
    def __init__(self, violations):
        self.violations = violations
        super().__init__(f"Jacobi identity fails on {len(violations)} triple(s), first {violations[:3]}")


# ---------------------------------------------------------------------------
# vectors


@dataclass(frozen=True)
class LieVector:
    coeffs: tuple
    flavor: str = "exact"

    @staticmethod
    def exact(values):
        return LieVector(tuple(as_fraction(v) for v in values), "exact")

    @staticmethod
    def floating(values):
        return LieVector(tuple(float(v) for v in values), "float")

    def __len__(self):
        return len(self.coeffs)

    def __getitem__(self, i):
        return self.coeffs[i]

    def _check(self, other):
        if not isinstance(other, LieVector):
            raise TypeError("expected a LieVector")
        if other.flavor != self.flavor:
            raise FlavorError(f"cannot mix {self.flavor} and {other.flavor} vectors")
        if len(other) != len(self):
            raise ValueError("dimension mismatch")

    def __add__(self, other):
        self._check(other)
        return LieVector(tuple(a + b for a, b in zip(self.coeffs, other.coeffs)), self.flavor)

    def __sub__(self, other):
        self._check(other)
        return LieVector(tuple(a - b for a, b in zip(self.coeffs, other.coeffs)), self.flavor)

    def __neg__(self):
        return LieVector(tuple(-a for a in self.coeffs), self.flavor)

    def __mul__(self, s):
        if self.flavor == "exact":
            if isinstance(s, float):
                raise FlavorError("float scalar on an exact vector")
            s = as_fraction(s)
        else:
            s = float(s)
        return LieVector(tuple(s * a for a in self.coeffs), self.flavor)

    __rmul__ = __mul__

    def is_zero(self):
        return all(a == 0 for a in self.coeffs)

    def to_float(self):
        return LieVector(tuple(float(a) for a in self.coeffs), "float")

    def to_exact(self):
        return LieVector(tuple(as_fraction(a) for a in self.coeffs), "exact")

    def array(self):
        return np.array([float(a) for a in self.coeffs])


def _like(values, flavor):
    return LieVector(tuple(values), flavor)


# ---------------------------------------------------------------------------
# the algebra


@dataclass(frozen=True)
class GradedNilAlgebra:
    name: str
    labels: tuple
    layers: tuple
    generators: tuple
    constants: tuple          # (a, b, c, coef) with a < b, coef a nonzero Fraction
    xi: int = 0
    matrix_size: int | None = None
    matrix_positions: tuple | None = None
    _table: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        table = {}
        for a, b, c, v in self.constants:
            table.setdefault((a, b), {})[c] = v
        object.__setattr__(self, "_table", table)

    # basic shape
    @property
    def dim(self):
        return len(self.labels)

    @property
    def step(self):
        return max(self.layers)

    @property
    def layer_counts(self):
        return [self.layers.count(j) for j in range(1, self.step + 1)]

    @property
    def ideal(self):
        """Indices of the non-xi basis elements (the eta's spanning I)."""
        return tuple(i for i in range(self.dim) if i != self.xi)

    @property
    def center_layer(self):
        return tuple(i for i in range(self.dim) if self.layers[i] == self.step)

    def index(self, label):
        return self.labels.index(label)

    def has_matrix_model(self):
        return self.matrix_positions is not None

    # brackets
    def bracket_raw(self, u, v):
        """Bracket of coefficient sequences over any ring (Fraction, float, arrays, sympy)."""
        zero = u[0] * 0
        out = [zero] * self.dim
        for a, b, c, coef in self.constants:
            ua, ub, va, vb = u[a], u[b], v[a], v[b]
            out[c] = out[c] + coef * (ua * vb - ub * va)
        return out

    def bracket(self, x: LieVector, y: LieVector) -> LieVector:
        x._check(y)
        if x.flavor == "float":
            consts = self.float_constants
            zero = 0.0
            out = [zero] * self.dim
            for a, b, c, coef in consts:
                out[c] += coef * (x[a] * y[b] - x[b] * y[a])
            return _like(out, "float")
        return _like(self.bracket_raw(x.coeffs, y.coeffs), "exact")

    @property
    def float_constants(self):
        return _float_constants(self)

    def bracket_basis(self, a, b):
        """Sparse dict c -> coef for [e_a, e_b]."""
        if a == b:
            return {}
        if a < b:
            return dict(self._table.get((a, b), {}))
        return {c: -v for c, v in self._table.get((b, a), {}).items()}

    def structure_tensor(self):
        t = np.zeros((self.dim, self.dim, self.dim))
        for a, b, c, v in self.constants:
            t[a, b, c] = float(v)
            t[b, a, c] = -float(v)
        return t

    def ad_matrix(self, x: LieVector):
        """Exact matrix M with M[c][b] = coefficient of e_c in [x, e_b]."""
        x = x.to_exact()
        m = [[Fraction(0)] * self.dim for _ in range(self.dim)]
        for a in range(self.dim):
            if x[a] == 0:
                continue
            for b in range(self.dim):
                for c, v in self.bracket_basis(a, b).items():
                    m[c][b] += x[a] * v
        return m

    def zero(self, flavor="exact"):
        return _like([Fraction(0) if flavor == "exact" else 0.0] * self.dim, flavor)

    def unit(self, i, flavor="exact"):
        v = [0] * self.dim
        v[i] = 1
        return LieVector.exact(v) if flavor == "exact" else LieVector.floating(v)

    def vector(self, values=None, flavor="exact", **named):
        """Build a vector from a full coefficient list or from label=value pairs."""
        vals = [0] * self.dim if values is None else list(values)
        for k, v in named.items():
            vals[self.index(k)] = v
        return LieVector.exact(vals) if flavor == "exact" else LieVector.floating(vals)

    def flow_vector(self, alpha, sign=1, flavor=None):
        """X_alpha = sign*xi + sum alpha_i eta_i.

        ``alpha`` runs over the generators other than xi and may continue over
        the remaining non-xi basis elements in basis order.
        """
        etas = [g for g in self.generators if g != self.xi]
        etas += [i for i in self.ideal if i not in etas]
        if len(alpha) > len(etas):
            raise AlgebraError(f"alpha has {len(alpha)} entries, at most {len(etas)} allowed")
        if flavor is None:
            flavor = "float" if any(isinstance(a, float) for a in alpha) else "exact"
        vals = [0] * self.dim
        vals[self.xi] = sign
        for i, a in zip(etas, alpha):
            vals[i] = a
        return LieVector.exact(vals) if flavor == "exact" else LieVector.floating(vals)

    def describe(self):
        return {
            "name": self.name,
            "dim": self.dim,
            "step": self.step,
            "labels": list(self.labels),
            "layer_counts": self.layer_counts,
            "generators": list(self.generators),
            "xi": self.xi,
        }


@lru_cache(maxsize=None)
def _float_constants(alg):
    return tuple((a, b, c, float(v)) for a, b, c, v in alg.constants)


def make_algebra(name, labels, layers, generators, brackets, xi=0, matrix_size=None,
                 matrix_positions=None, validate=True):
    """Create an algebra from a dict {(a, b): {c: coef}}; (b, a) is implied."""
    consts = {}
    for (a, b), out in brackets.items():
        if a == b:
            if any(v != 0 for v in out.values()):
                raise AlgebraError(f"[e{a}, e{a}] must vanish")
            continue
        sgn = 1 if a < b else -1
        key = (min(a, b), max(a, b))
        for c, v in out.items():
            v = sgn * as_fraction(v)
            if v == 0:
                continue
            prev = consts.get(key, {}).get(c)
            if prev is not None and prev != v:
                raise AlgebraError(f"antisymmetry violated for pair {key} -> {c}")
            consts.setdefault(key, {})[c] = v
    table = tuple(sorted((a, b, c, v) for (a, b), out in consts.items() for c, v in out.items()))
    alg = GradedNilAlgebra(name, tuple(labels), tuple(layers), tuple(generators), table, xi,
                           matrix_size, matrix_positions)
    if validate:
        _validate_grading(alg)
    return alg


def _validate_grading(alg):
    k = alg.step
    if list(alg.layers) != sorted(alg.layers):
        raise AlgebraError("basis must be ordered by layer")
    if alg.layers[alg.xi] != 1:
        raise AlgebraError("xi must lie in the first layer")
    for a, b, c, v in alg.constants:
        if not 0 <= c < alg.dim:
            raise AlgebraError(f"bracket index {c} out of range")
        if alg.layers[c] < alg.layers[a] + alg.layers[b]:
            raise AlgebraError(
                f"grading violated: [{alg.labels[a]}, {alg.labels[b]}] hits layer {alg.layers[c]}")
        if alg.layers[a] + alg.layers[b] > k:
            raise AlgebraError("bracket beyond the last layer must vanish")


# ---------------------------------------------------------------------------
# Jacobi


def _sparse_bracket(alg, u, v):
    out = {}
    for a, x in u.items():
        for b, y in v.items():
            for c, w in alg.bracket_basis(a, b).items():
                out[c] = out.get(c, 0) + x * y * w
    return {c: w for c, w in out.items() if w != 0}


def check_jacobi(alg):
    """Return the basis triples (a, b, c) on which the Jacobi identity fails."""
    bad = []
    unit = [{i: Fraction(1)} for i in range(alg.dim)]
    for a in range(alg.dim):
        for b in range(a + 1, alg.dim):
            bc = None
            for c in range(b + 1, alg.dim):
                if alg.layers[a] + alg.layers[b] + alg.layers[c] > alg.step:
                    continue
                t1 = _sparse_bracket(alg, unit[a], _sparse_bracket(alg, unit[b], unit[c]))
                t2 = _sparse_bracket(alg, unit[b], _sparse_bracket(alg, unit[c], unit[a]))
                t3 = _sparse_bracket(alg, unit[c], _sparse_bracket(alg, unit[a], unit[b]))
                tot = {}
                for t in (t1, t2, t3):
                    for i, w in t.items():
                        tot[i] = tot.get(i, 0) + w
                if any(w != 0 for w in tot.values()):
                    bad.append((a, b, c))
    return bad


# ---------------------------------------------------------------------------
# BCH


@lru_cache(maxsize=None)
def dynkin_terms(k):
    """Words in {0: X, 1: Y} with rational weights, BCH truncated at degree k.

    The word w_1 ... w_m stands for the right-nested bracket
    [w_1, [w_2, ... [w_{m-1}, w_m]]].
    """
    acc = {}

    def rec(pairs, total):
        if pairs:
            n = len(pairs)
            denom = total
            for r, s in pairs:
                denom *= math.factorial(r) * math.factorial(s)
            coef = Fraction((-1) ** (n - 1), n * denom)
            word = tuple(x for r, s in pairs for x in (0,) * r + (1,) * s)
            if len(word) == 1 or word[-1] != word[-2]:
                acc[word] = acc.get(word, 0) + coef
        for r in range(0, k - total + 1):
            for s in range(0, k - total - r + 1):
                if r + s == 0:
                    continue
                rec(pairs + ((r, s),), total + r + s)

    rec((), 0)
    return tuple(sorted(((w, c) for w, c in acc.items() if c != 0), key=lambda t: (len(t[0]), t[0])))


def bch_raw(alg, x, y, bracket=None):
    """log(exp x exp y) for coefficient sequences over any ring."""
    br = alg.bracket_raw if bracket is None else bracket
    memo = {}

    def nested(word):
        if word in memo:
            return memo[word]
        if len(word) == 1:
            val = x if word[0] == 0 else y
        else:
            val = br(x if word[0] == 0 else y, nested(word[1:]))
        memo[word] = val
        return val

    out = [x[i] * 0 for i in range(alg.dim)]
    for word, coef in dynkin_terms(alg.step):
        term = nested(word)
        out = [o + coef * t for o, t in zip(out, term)]
    return out


def bch(alg, x: LieVector, y: LieVector, method="auto") -> LieVector:
    """log(exp(x) exp(y)).

    ``method`` is ``"series"`` (Dynkin's formula truncated at the step),
    ``"matrix"`` (exact unipotent exp/log, triangular family only) or
    ``"auto"`` which prefers the matrix route when one is registered.
    """
    x._check(y)
    if method == "auto":
        method = "matrix" if alg.has_matrix_model() else "series"
    if method == "matrix":
        if not alg.has_matrix_model():
            raise AlgebraError(f"{alg.name} has no matrix model")
        m = matrix_mul(matrix_exp(alg, x), matrix_exp(alg, y))
        return matrix_log(alg, m, x.flavor)
    if method != "series":
        raise ValueError(f"unknown BCH method {method!r}")
    if x.flavor == "float":
        fc = alg.float_constants

        def br(u, v):
            out = [0.0] * alg.dim
            for a, b, c, coef in fc:
                out[c] += coef * (u[a] * v[b] - u[b] * v[a])
            return out

        return _like(bch_raw(alg, list(x.coeffs), list(y.coeffs), br), "float")
    return _like(bch_raw(alg, list(x.coeffs), list(y.coeffs)), "exact")


# matrix model ---------------------------------------------------------------


def to_matrix(alg, x: LieVector):
    """Strictly upper triangular matrix of x (nested lists for exact, ndarray for float)."""
    n = alg.matrix_size
    if x.flavor == "exact":
        m = [[Fraction(0)] * n for _ in range(n)]
    else:
        m = np.zeros((n, n))
    for idx, (i, j) in enumerate(alg.matrix_positions):
        m[i][j] = x[idx]
    return m


def from_matrix(alg, m, flavor):
    vals = [m[i][j] for (i, j) in alg.matrix_positions]
    return LieVector.exact(vals) if flavor == "exact" else LieVector.floating(vals)


def _triu_mul(a, b):
    # product of upper triangular (lists); only i <= l <= j contributes
    n = len(a)
    out = [[Fraction(0)] * n for _ in range(n)]
    for i in range(n):
        ai = a[i]
        oi = out[i]
        for l in range(i, n):
            v = ai[l]
            if v == 0:
                continue
            bl = b[l]
            for j in range(l, n):
                if bl[j]:
                    oi[j] += v * bl[j]
    return out


def _exp_nil(nm, exact):
    n = len(nm)
    if not exact:
        out = np.eye(n)
        term = np.eye(n)
        for j in range(1, n):
            term = term @ nm / j
            out = out + term
        return out
    out = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    term = [row[:] for row in out]
    for j in range(1, n):
        term = _triu_mul(term, nm)
        term = [[v / j for v in row] for row in term]
        out = [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(out, term)]
    return out


def matrix_exp(alg, x: LieVector):
    return _exp_nil(to_matrix(alg, x), x.flavor == "exact")


def matrix_mul(a, b):
    if isinstance(a, np.ndarray):
        return a @ b
    return _triu_mul(a, b)


def matrix_log(alg, m, flavor="exact"):
    n = alg.matrix_size
    if flavor != "exact":
        nm = np.asarray(m, dtype=float) - np.eye(n)
        out = np.zeros((n, n))
        term = np.eye(n)
        for j in range(1, n):
            term = term @ nm
            out = out + term * ((-1) ** (j + 1) / j)
        return from_matrix(alg, out, flavor)
    nm = [[m[i][j] - (1 if i == j else 0) for j in range(n)] for i in range(n)]
    out = [[Fraction(0)] * n for _ in range(n)]
    term = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    for j in range(1, n):
        term = _triu_mul(term, nm)
        c = Fraction((-1) ** (j + 1), j)
        out = [[a + c * b for a, b in zip(r1, r2)] for r1, r2 in zip(out, term)]
    return from_matrix(alg, out, flavor)


# ---------------------------------------------------------------------------
# degrees, transversality, scaling


def degree(alg, x: LieVector, y: LieVector):
    """Largest j with ad_x^j(y) != 0."""
    x = x.to_exact() if x.flavor == "exact" else x
    y = y.to_exact() if x.flavor == "exact" else y.to_float()
    j = 0
    cur = alg.bracket(x, y)
    tol = 0 if x.flavor == "exact" else 1e-12
    while not all(abs(c) <= tol for c in cur.coeffs):
        j += 1
        cur = alg.bracket(x, cur)
        if j > alg.step:
            raise AlgebraError("ad is not nilpotent, algebra data inconsistent")
    return j


@dataclass
class TransversalityReport:
    span_generators_dim: int
    range_ad_dim: int
    centralizer_dim: int
    joint_span_dim: int
    dim: int
    verdict: bool
    witness: list
    x_alpha: list
    sign: int
    predicate: str = "plain"
    direct_sum: bool = True
    layer_deficiency: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "span_generators_dim": self.span_generators_dim,
            "range_ad_dim": self.range_ad_dim,
            "centralizer_dim": self.centralizer_dim,
            "joint_span_dim": self.joint_span_dim,
            "dim": self.dim,
            "verdict": self.verdict,
            "witness": [[str(v) for v in w] for w in self.witness],
            "x_alpha": [str(v) for v in self.x_alpha],
            "sign": self.sign,
            "predicate": self.predicate,
            "direct_sum": self.direct_sum,
            "layer_deficiency": {str(k): v for k, v in self.layer_deficiency.items()},
        }


def _sign_of(alg, x):
    return 1 if x[alg.xi] > 0 else -1


def _assemble(alg, x, centralizer, predicate):
    d = alg.dim
    gens = [[Fraction(int(i == g)) for i in range(d)] for g in alg.generators]
    adm = alg.ad_matrix(x)
    ran = [[adm[c][b] for c in range(d)] for b in range(d)]
    rg, rr, rc = rank(gens), rank(ran), rank(centralizer)
    rows = gens + ran + centralizer
    joint = rank(rows)
    direct = rank(gens + ran) == rg + rr
    witness = complement(rows, d) if joint < d else []
    deficiency = {}
    for w in witness:
        lay = alg.layers[next(i for i, v in enumerate(w) if v != 0)]
        deficiency[lay] = deficiency.get(lay, 0) + 1
    return TransversalityReport(rg, rr, rc, joint, d, joint == d, witness, list(x.coeffs),
                                _sign_of(alg, x), predicate, direct, deficiency)


def _check_outside_ideal(alg, x):
    if x[alg.xi] == 0:
        raise AlgebraError("X_alpha lies in the ideal I spanned by the non-xi basis elements")


def check_transversality(alg, x_alpha: LieVector) -> TransversalityReport:
    """span<G> + Ran(ad X) + C_I(X) versus the whole algebra, by exact ranks."""
    x = x_alpha.to_exact()
    _check_outside_ideal(alg, x)
    adm = alg.ad_matrix(x)
    ideal = alg.ideal
    rows = [[adm[c][i] for i in ideal] for c in range(alg.dim)]
    ker = nullspace(rows, len(ideal))
    cent = []
    for v in ker:
        full = [Fraction(0)] * alg.dim
        for i, val in zip(ideal, v):
            full[i] = val
        cent.append(full)
    return _assemble(alg, x, cent, "plain")


def _ad_sparse(alg, x):
    """Columns of ad_x as sparse dicts: col[b] = {c: coef of e_c in [x, e_b]}."""
    cols = []
    for b in range(alg.dim):
        out = {}
        for a in range(alg.dim):
            if x[a] == 0:
                continue
            for c, v in alg.bracket_basis(a, b).items():
                out[c] = out.get(c, 0) + x[a] * v
        cols.append({c: v for c, v in out.items() if v != 0})
    return cols


def _apply(cols, vec):
    out = {}
    for b, w in vec.items():
        for c, v in cols[b].items():
            out[c] = out.get(c, 0) + w * v
    return {c: v for c, v in out.items() if v != 0}


def check_generalized_transversality(alg, x_alpha: LieVector, functional, predicate="polynomial",
                                     homogeneous=False):
    """Transversality with the centralizer replaced by a representation centralizer.

    ``literal``:    {Y in I : L([X, Y]) = 0}
    ``polynomial``: {Y in I : L(ad_X^j [X, Y]) = 0 for every j >= 0}

    With ``homogeneous=True`` only layer-homogeneous Y are admitted, i.e. the
    centralizer is the span of its intersections with the individual layers.
    """
    if predicate not in ("literal", "polynomial"):
        raise ValueError("predicate must be 'literal' or 'polynomial'")
    x = x_alpha.to_exact()
    _check_outside_ideal(alg, x)
    lam = [as_fraction(v) for v in functional]
    if len(lam) != alg.dim:
        raise AlgebraError("functional has the wrong length")
    cols = _ad_sparse(alg, x)
    ideal = alg.ideal
    jmax = 0 if predicate == "literal" else alg.step
    conds = []
    for i in ideal:
        cur = dict(cols[i])
        vals = []
        for _ in range(jmax + 1):
            vals.append(sum(lam[c] * v for c, v in cur.items()))
            if not cur:
                break
            cur = _apply(cols, cur)
        vals += [Fraction(0)] * (jmax + 1 - len(vals))
        conds.append(vals)
    groups = [list(range(len(ideal)))]
    if homogeneous:
        groups = [[p for p, i in enumerate(ideal) if alg.layers[i] == m] for m in range(1, alg.step + 1)]
    cent = []
    for grp in groups:
        if not grp:
            continue
        rows = [[conds[p][j] for p in grp] for j in range(jmax + 1)]
        rows = [r for r in rows if any(v != 0 for v in r)]
        for v in nullspace(rows, len(grp)):
            full = [Fraction(0)] * alg.dim
            for p, val in zip(grp, v):
                full[ideal[p]] = val
            cent.append(full)
    tag = predicate + ("/homogeneous" if homogeneous else "")
    return _assemble(alg, x, cent, tag)


def generic_functional(alg, layers=None, seed=0):
    """Random positive rational covector supported on the given layers (default: center)."""
    rng = np.random.default_rng(seed)
    layers = {alg.step} if layers is None else set(layers)
    return [Fraction(int(rng.integers(1, 1000)), int(rng.integers(1, 1000)))
            if alg.layers[i] in layers else Fraction(0) for i in range(alg.dim)]


def generic_alpha(alg, rng=None, seed=0, check=None, tries=20):
    """Random rational frequencies, resampled until ``check(alpha)`` holds."""
    rng = np.random.default_rng(seed) if rng is None else rng
    n = len([g for g in alg.generators if g != alg.xi])
    for _ in range(tries):
        alpha = tuple(Fraction(int(rng.integers(1, 10**6)), 10**6 + int(rng.integers(1, 10**5)))
                      for _ in range(n))
        if check is None or check(alpha):
            return alpha
    raise AlgebraError("could not find a generic alpha")


def generic_degrees_ok(alg, alpha, sign=1):
    x = alg.flow_vector(alpha, sign)
    return all(degree(alg, x, alg.unit(i)) == alg.step - alg.layers[i] for i in alg.ideal)


@dataclass
class ScalingData:
    S: Fraction
    lam: Fraction
    delta: Fraction
    degrees: dict
    rho: dict

    @property
    def exponent(self):
        return Fraction(1, 3) / self.S

    def to_dict(self):
        return {"S": str(self.S), "lambda": str(self.lam), "delta": str(self.delta),
                "degrees": dict(self.degrees), "rho": {k: str(v) for k, v in self.rho.items()},
                "exponent": str(self.exponent)}


def layer_count_S(alg):
    """(n1 - 1)(k - 1) + n2 (k - 2) + ... + n_{k-1} from the layer counts."""
    k = alg.step
    n = alg.layer_counts
    return (n[0] - 1) * (k - 1) + sum(n[m - 1] * (k - m) for m in range(2, k))


def triangular_closed_form_S(k):
    """The closed form (k-1)(k^2+k-3) quoted for triangular algebras."""
    return (k - 1) * (k * k + k - 3)


def scaling_data(alg, x_alpha, rho="homogeneous"):
    """S, lambda(rho), delta(rho) and per-element degrees with respect to X_alpha."""
    x = x_alpha.to_exact()
    etas = alg.ideal
    degs = {alg.labels[i]: degree(alg, x, alg.unit(i)) for i in etas}
    S = Fraction(sum(degs.values()))
    if S == 0:
        raise AlgebraError("all degrees vanish; S is undefined")
    if isinstance(rho, str):
        if rho != "homogeneous":
            raise ValueError("rho must be 'homogeneous' or a vector")
        rv = {alg.labels[i]: degs[alg.labels[i]] / S for i in etas}
    else:
        vals = list(rho.values()) if isinstance(rho, dict) else list(rho)
        if len(vals) != len(etas):
            raise AlgebraError(f"rho needs {len(etas)} entries")
        rv = {alg.labels[i]: as_fraction(v) for i, v in zip(etas, vals)}
    lam = min(rv[l] / d for l, d in degs.items() if d != 0)
    delta = None
    k = alg.step
    nfull = alg.layer_counts
    for m in range(1, k):
        lo = [alg.labels[i] for i in etas if alg.layers[i] == m]
        hi = [alg.labels[i] for i in etas if alg.layers[i] == m + 1][: nfull[m - 1]]
        for a in lo:
            for b in hi:
                v = rv[a] - rv[b]
                delta = v if delta is None else min(delta, v)
    if delta is None:
        delta = Fraction(0)
    return ScalingData(S, lam, delta, degs, rv)


@dataclass
class RescaledBasis:
    t: float
    vectors: list            # float arrays, X(t) first then Y_i(t)
    x_brackets: dict         # (i, l) -> coefficient of Y_l(t) in [X(t), Y_i(t)]
    rho: dict


def rescale_basis(alg, x_alpha, t, rho):
    """Rescaled adapted basis (e^t X, e^{-rho_i t} Y_i) and its X-bracket table."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    etas = alg.ideal
    if isinstance(rho, str):
        rho = scaling_data(alg, x_alpha, rho).rho
    rv = dict(rho) if isinstance(rho, dict) else {alg.labels[i]: v for i, v in zip(etas, rho)}
    r = [float(rv[alg.labels[i]]) for i in etas]
    x = x_alpha.to_float()
    vecs = [np.exp(t) * x.array()]
    for i, ri in zip(etas, r):
        e = np.zeros(alg.dim)
        e[i] = np.exp(-ri * t)
        vecs.append(e)
    br = {}
    for p, i in enumerate(etas):
        out = alg.bracket(x, alg.unit(i, "float"))
        for q, l in enumerate(etas):
            if out[l] != 0:
                br[(p, q)] = out[l] * math.exp(t * (1 - r[p] + r[q]))
    return RescaledBasis(float(t), vecs, br, rv)


# ---------------------------------------------------------------------------
# built-ins


def heisenberg():
    return make_algebra("heisenberg", ["X1", "X2", "Z"], [1, 1, 2], [0, 1],
                        {(0, 1): {2: 1}}, matrix_size=3,
                        matrix_positions=((0, 1), (1, 2), (0, 2)))


def filiform(k):
    if k < 2:
        raise AlgebraError("filiform needs k >= 2")
    labels = ["X"] + [f"Y{i}" for i in range(1, k + 1)]
    layers = [1, 1] + list(range(2, k + 1))
    br = {(0, i): {i + 1: 1} for i in range(1, k)}
    return make_algebra(f"filiform:{k}", labels, layers, [0, 1], br)


def triangular(k):
    """Strictly upper triangular (k+1)x(k+1) matrices, step k, k generators."""
    if k < 2:
        raise AlgebraError("triangular needs k >= 2")
    n = k + 1
    pos = [(i, i + j) for j in range(1, n) for i in range(n - j)]
    index = {p: t for t, p in enumerate(pos)}
    if k == 3:
        labels = ["X1", "X2", "X3", "Y1", "Y2", "Z"]
    else:
        labels = [f"E{i + 1}_{j + 1}" for (i, j) in pos]
    layers = [j - i for (i, j) in pos]
    br = {}
    for (i, j) in pos:
        for (p, q) in pos:
            if j == p:
                br.setdefault((index[(i, j)], index[(p, q)]), {})[index[(i, q)]] = 1
            if q == i:
                d = br.setdefault((index[(i, j)], index[(p, q)]), {})
                d[index[(p, j)]] = d.get(index[(p, j)], 0) - 1
    gens = [t for t, (i, j) in enumerate(pos) if j - i == 1]
    return make_algebra(f"triangular:{k}", labels, layers, gens, br,
                        matrix_size=n, matrix_positions=tuple(pos))


# free nilpotent via Hall basis ------------------------------------------------


def _poly_mul(p, q):
    out = {}
    for w1, c1 in p.items():
        for w2, c2 in q.items():
            w = w1 + w2
            out[w] = out.get(w, 0) + c1 * c2
    return out


def _poly_bracket(p, q):
    out = _poly_mul(p, q)
    for w, c in _poly_mul(q, p).items():
        out[w] = out.get(w, 0) - c
    return {w: c for w, c in out.items() if c != 0}


def hall_basis(g, s):
    """Basic commutators of weight <= s on g letters.

    Each element is (weight, left, right) with left/right indices into the
    list, or (1, letter, None) for a letter.  Ordering: by weight, then by
    construction order; [u, v] is basic when u > v and, if u = [u', u''],
    u'' <= v.
    """
    elems = [(1, i, None) for i in range(g)]
    by_weight = {1: list(range(g))}
    for m in range(2, s + 1):
        new = []
        for wv in range(1, m):
            wu = m - wv
            for u in by_weight.get(wu, []):
                for v in by_weight.get(wv, []):
                    if not u > v:
                        continue
                    eu = elems[u]
                    if eu[0] > 1 and eu[2] > v:
                        continue
                    new.append((m, u, v))
        new.sort(key=lambda e: (e[1], e[2]))
        by_weight[m] = []
        for e in new:
            by_weight[m].append(len(elems))
            elems.append(e)
    return elems


def _hall_label(elems, i, names):
    w, l, r = elems[i]
    if w == 1:
        return names[l]
    return f"[{_hall_label(elems, l, names)},{_hall_label(elems, r, names)}]"


@lru_cache(maxsize=None)
def free_nilpotent(g, s):
    if g < 2 or s < 1:
        raise AlgebraError("free nilpotent needs g >= 2, s >= 1")
    elems = hall_basis(g, s)
    names = [f"X{i + 1}" for i in range(g)]
    polys = []
    for w, l, r in elems:
        if w == 1:
            polys.append({(l,): 1})
        else:
            polys.append(_poly_bracket(polys[l], polys[r]))
    weights = [e[0] for e in elems]
    # per-degree solver: pick independent words, invert the square block
    solvers = {}
    for m in range(1, s + 1):
        idx = [i for i, w in enumerate(weights) if w == m]
        words = sorted({wd for i in idx for wd in polys[i]})
        rows = [[Fraction(polys[i].get(wd, 0)) for wd in words] for i in idx]
        _, piv = rref(rows, len(words))
        if len(piv) != len(idx):
            raise AlgebraError("Hall elements are not independent")
        chosen = [words[p] for p in piv]
        a = [[Fraction(polys[i].get(wd, 0)) for i in idx] for wd in chosen]
        solvers[m] = (idx, chosen, a, words)
    br = {}
    from ._exact import solve_square
    for i in range(len(elems)):
        for j in range(i + 1, len(elems)):
            m = weights[i] + weights[j]
            if m > s:
                continue
            p = _poly_bracket(polys[i], polys[j])
            if not p:
                continue
            idx, chosen, a, words = solvers[m]
            x = solve_square(a, [Fraction(p.get(wd, 0)) for wd in chosen])
            # full check against every word
            for wd in set(p) | set(words):
                tot = sum(xc * polys[c].get(wd, 0) for xc, c in zip(x, idx))
                if tot != p.get(wd, 0):
                    raise AlgebraError("bracket not in the span of the Hall basis")
            br[(i, j)] = {c: xc for xc, c in zip(x, idx) if xc != 0}
    labels = [_hall_label(elems, i, names) for i in range(len(elems))]
    return make_algebra(f"free:{g}:{s}", labels, weights, list(range(g)), br)


def free3_named_basis(alg):
    """Named elements X_a, Y_b, Z_{3(a-1)+b} of the free 3-generator step-3 algebra.

    Y1 = [X1, X2], Y2 = [X2, X3], Y3 = [X1, X3] and Z_{3(a-1)+b} = [X_a, Y_b],
    expressed in the Hall basis (a change-of-basis table).
    """
    if not alg.name.startswith("free:3:"):
        raise AlgebraError("named basis is defined for free:3:<s>")
    x = [alg.unit(i) for i in range(3)]
    ys = [alg.bracket(x[0], x[1]), alg.bracket(x[1], x[2]), alg.bracket(x[0], x[2])]
    out = {f"X{i + 1}": x[i] for i in range(3)}
    out.update({f"Y{i + 1}": ys[i] for i in range(3)})
    for a in range(3):
        for b in range(3):
            out[f"Z{3 * a + b + 1}"] = alg.bracket(x[a], ys[b])
    return out


def f23_lattice():
    """Free 2-generator step-3 algebra in the basis (X1, X2, Y1/2, Z1/12, Z2/12).

    Here [X1, X2] = Y1, [X1, Y1] = Z1, [X2, Y1] = Z2.  Integer second-kind
    coordinates in the rescaled basis form a lattice preserved by the block
    automorphisms diag(A, 1, A), A in SL(2, Z).
    """
    br = {(0, 1): {2: 2}, (0, 2): {3: 6}, (1, 2): {4: 6}}
    return make_algebra("f23-lattice", ["X1", "X2", "Y1/2", "Z1/12", "Z2/12"], [1, 1, 2, 3, 3],
                        [0, 1], br)


_BUILTIN = re.compile(r"^(heisenberg|f23-lattice|filiform:(\d+)|triangular:(\d+)|free:(\d+):(\d+))$")


def builtin(name):
    m = _BUILTIN.match(name)
    if not m:
        raise AlgebraError(f"unknown algebra {name!r}")
    if name == "heisenberg":
        return heisenberg()
    if name == "f23-lattice":
        return f23_lattice()
    if m.group(2):
        return filiform(int(m.group(2)))
    if m.group(3):
        return triangular(int(m.group(3)))
    g, s = int(m.group(4)), int(m.group(5))
    return free_nilpotent(g, s)


# text format ---------------------------------------------------------------


def parse_algebra_text(text, name="custom"):
    """Parse the structured text format.

    Header lines ``dim N``, ``step K``, ``layers n1 n2 ...``, ``generators i j ...``
    and optionally ``xi i`` and ``labels a b ...``; then one ``a b c coef``
    line per nonzero constant [e_a, e_b] -> coef e_c.  Indices are 0-based,
    ``#`` starts a comment.
    """
    head = {}
    br = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0].lower()
        if key in ("dim", "step", "layers", "generators", "xi", "labels", "name"):
            head[key] = parts[1:]
            continue
        if len(parts) != 4:
            raise AlgebraError(f"bad constant line: {raw!r}")
        a, b, c = (int(p) for p in parts[:3])
        d = br.setdefault((a, b), {})
        d[c] = d.get(c, 0) + Fraction(parts[3])
    for k in ("dim", "step", "layers", "generators"):
        if k not in head:
            raise AlgebraError(f"missing header field {k!r}")
    dim, step = int(head["dim"][0]), int(head["step"][0])
    counts = [int(v) for v in head["layers"]]
    if sum(counts) != dim or len(counts) != step:
        raise AlgebraError("layer counts do not match dim/step")
    layers = [j + 1 for j, n in enumerate(counts) for _ in range(n)]
    labels = head.get("labels") or [f"e{i}" for i in range(dim)]
    xi = int(head["xi"][0]) if "xi" in head else 0
    name = head["name"][0] if "name" in head else name
    alg = make_algebra(name, labels, layers, [int(v) for v in head["generators"]], br, xi=xi)
    bad = check_jacobi(alg)
    if bad:
        raise JacobiError(bad)
    return alg


def algebra_to_text(alg):
    lines = [f"name {alg.name}", f"dim {alg.dim}", f"step {alg.step}",
             "layers " + " ".join(map(str, alg.layer_counts)),
             "generators " + " ".join(map(str, alg.generators)), f"xi {alg.xi}",
             "labels " + " ".join(l.replace(" ", "") for l in alg.labels)]
    for a, b, c, v in alg.constants:
        lines.append(f"{a} {b} {c} {v}")
    return "\n".join(lines) + "\n"


def load_algebra(spec):
    """Built-in name or path to a text file."""
    if _BUILTIN.match(spec):
        return builtin(spec)
    p = Path(spec)
    if p.exists():
        return parse_algebra_text(p.read_text(), name=p.stem)
    raise AlgebraError(f"unknown algebra {spec!r}")
