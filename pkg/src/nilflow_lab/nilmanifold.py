"""Points of Gamma\\N in Malcev coordinates, lattice reduction, the nilflow and its return map.

Coordinates of the second kind are primary: ``x`` stands for
``exp(x_1 e_1) ... exp(x_d e_d)`` with the basis in layer order, and the
lattice is ``Z^d`` in these coordinates.  The group law is a polynomial map
derived once per algebra by pushing symbolic coordinates through the BCH
series; it is then compiled twice, once with Fraction constants (exact) and
once with float constants (vectorised over numpy arrays).
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np

from ._exact import as_fraction
from ._poly import Poly, compile_polys
from .algebra import AlgebraError, FlavorError, GradedNilAlgebra, LieVector, bch_raw


class LatticeError(ValueError):
    pass


class ReturnMapMismatch(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# group law


@dataclass
class GroupLaw:
    alg: GradedNilAlgebra
    first_polys: list      # second kind -> first kind
    second_polys: list     # first kind -> second kind
    mul_polys: list        # (x, y) -> x*y, 2d variables
    inv_polys: list

    def __post_init__(self):
        d = self.alg.dim
        self._fns = {}
        for exact in (True, False):
            self._fns[("first", exact)] = compile_polys(self.first_polys, d, exact=exact)
            self._fns[("second", exact)] = compile_polys(self.second_polys, d, exact=exact)
            self._fns[("mul", exact)] = compile_polys(self.mul_polys, 2 * d, exact=exact)
            self._fns[("inv", exact)] = compile_polys(self.inv_polys, d, exact=exact)
        # left multiplication by exp(t e_i): polynomial in (t, x)
        self._left = {}
        for exact in (True, False):
            for i in range(d):
                subs = []
                t = Poly.var(0, d + 1)
                for a in range(d):
                    subs.append(t if a == i else Poly.const(0, d + 1))
                subs += [Poly.var(1 + a, d + 1) for a in range(d)]
                polys = [p.compose(subs, d + 1) for p in self.mul_polys]
                self._left[(i, exact)] = compile_polys(polys, d + 1, exact=exact)

    def fn(self, kind, exact):
        return self._fns[(kind, exact)]

    def mul(self, x, y, exact):
        return self._fns[("mul", exact)](*x, *y)

    def inv(self, x, exact):
        return self._fns[("inv", exact)](*x)

    def first(self, x, exact):
        return self._fns[("first", exact)](*x)

    def second(self, u, exact):
        return self._fns[("second", exact)](*u)

    def left(self, i, t, x, exact):
        return self._left[(i, exact)](t, *x)


def _derive(alg):
    d = alg.dim
    # first kind of exp(x1 e1)...exp(xd ed)
    xs = [Poly.var(i, d) for i in range(d)]
    zero = Poly.const(0, d)
    acc = None
    for i in range(d):
        u = [zero] * d
        u[i] = xs[i]
        acc = u if acc is None else bch_raw(alg, acc, u)
    first = acc
    # invert the unitriangular map: x_c = u_c - (first_c(x) - x_c)
    us = [Poly.var(i, d) for i in range(d)]
    second = []
    for c in range(d):
        rest = first[c] - xs[c]
        subs = second + [zero] * (d - c)
        second.append(us[c] - rest.compose(subs, d))
    # product
    n2 = 2 * d
    fx = [p.compose([Poly.var(i, n2) for i in range(d)], n2) for p in first]
    fy = [p.compose([Poly.var(d + i, n2) for i in range(d)], n2) for p in first]
    prod_first = bch_raw(alg, fx, fy)
    mul = [p.compose(prod_first, n2) for p in second]
    # inverse: second(-first(x))
    negf = [-p for p in first]
    inv = [p.compose(negf, d) for p in second]
    return first, second, mul, inv


@lru_cache(maxsize=None)
def group_law(alg: GradedNilAlgebra) -> GroupLaw:
    first, second, mul, inv = _derive(alg)
    return GroupLaw(alg, first, second, mul, inv)


# ---------------------------------------------------------------------------
# elements


@dataclass(frozen=True)
class GroupElement:
    alg: GradedNilAlgebra = field(repr=False)
    coords: tuple = ()
    flavor: str = "float"

    @staticmethod
    def make(alg, coords, flavor=None):
        if flavor is None:
            flavor = "exact" if all(isinstance(c, (int, Fraction)) for c in coords) else "float"
        if len(coords) != alg.dim:
            raise ValueError("wrong number of coordinates")
        if flavor == "exact":
            return GroupElement(alg, tuple(as_fraction(c) for c in coords), "exact")
        return GroupElement(alg, tuple(float(c) for c in coords), "float")

    @property
    def exact(self):
        return self.flavor == "exact"

    def array(self):
        return np.array([float(c) for c in self.coords])

    def to_float(self):
        return GroupElement(self.alg, tuple(float(c) for c in self.coords), "float")

    def to_exact(self):
        return GroupElement(self.alg, tuple(as_fraction(c) for c in self.coords), "exact")

    def first_kind(self) -> LieVector:
        u = group_law(self.alg).first(self.coords, self.exact)
        return LieVector.exact(u) if self.exact else LieVector.floating(u)

    def __mul__(self, other):
        return multiply(self, other)


def identity(alg, flavor="exact"):
    z = Fraction(0) if flavor == "exact" else 0.0
    return GroupElement(alg, (z,) * alg.dim, flavor)


def exp_element(alg, x: LieVector) -> GroupElement:
    """exp(x) as a group element in second-kind coordinates."""
    exact = x.flavor == "exact"
    return GroupElement(alg, tuple(group_law(alg).second(x.coeffs, exact)), x.flavor)


def from_first_kind(alg, u: LieVector) -> GroupElement:
    return exp_element(alg, u)


def multiply(g: GroupElement, h: GroupElement) -> GroupElement:
    if g.alg != h.alg:
        raise AlgebraError("elements of different groups")
    if g.flavor != h.flavor:
        raise FlavorError(f"cannot multiply {g.flavor} and {h.flavor} elements")
    return GroupElement(g.alg, tuple(group_law(g.alg).mul(g.coords, h.coords, g.exact)), g.flavor)


def inverse(g: GroupElement) -> GroupElement:
    return GroupElement(g.alg, tuple(group_law(g.alg).inv(g.coords, g.exact)), g.flavor)


# ---------------------------------------------------------------------------
# lattice


@dataclass(frozen=True)
class Lattice:
    alg: GradedNilAlgebra
    samples_checked: int
    integral_constants: bool


@lru_cache(maxsize=None)
def lattice(alg: GradedNilAlgebra, samples=200, seed=0) -> Lattice:
    """Integrality certificate for Gamma = Z^d in second-kind coordinates.

    The group law and inverse are required to map random integer vectors to
    integer vectors, and so are the left translations by lattice generators.
    """
    law = group_law(alg)
    rng = np.random.default_rng(seed)
    d = alg.dim
    for _ in range(samples):
        x = [int(v) for v in rng.integers(-6, 7, d)]
        y = [int(v) for v in rng.integers(-6, 7, d)]
        out = list(law.mul(x, y, True)) + list(law.inv(x, True))
        if any(as_fraction(v).denominator != 1 for v in out):
            raise LatticeError(
                f"{alg.name}: integer coordinates are not closed under the group law; "
                "register a rescaled basis (e.g. f23-lattice)")
    integral = all(v.denominator == 1 for *_, v in alg.constants)
    return Lattice(alg, samples, integral)


def _floor(v, exact):
    if exact:
        return math.floor(v)
    return np.floor(v)


def reduce_mod_lattice(g: GroupElement, centered=False):
    """(point with second-kind coordinates in [0,1)^d, integer word) with g = word * point.

    The word is returned as the second-kind coordinates of the lattice
    element.  ``centered=True`` rounds instead of flooring (coordinates in
    [-1/2, 1/2)), which is what distances use.
    """
    lattice(g.alg)
    return _reduce(g.alg, g.coords, g.exact, centered)


def _reduce(alg, coords, exact, centered=False):
    law = group_law(alg)
    x = tuple(coords)
    word = []
    for i in range(alg.dim):
        if exact:
            n = math.floor(x[i] + Fraction(1, 2)) if centered else math.floor(x[i])
        else:
            n = math.floor(x[i] + 0.5) if centered else math.floor(x[i])
        if n:
            x = law.left(i, -n, x, exact)
        if not exact:
            lo, hi = (-0.5, 0.5) if centered else (0.0, 1.0)
            while x[i] >= hi:
                x = law.left(i, -1, x, exact)
                n += 1
            while x[i] < lo:
                x = law.left(i, 1, x, exact)
                n -= 1
        word.append(int(n))
    # g = exp(n_1 e_1) ... exp(n_d e_d) * point
    return GroupElement(alg, tuple(x), "exact" if exact else "float"), tuple(word)


def reduce_array(alg, x: np.ndarray, centered=False) -> np.ndarray:
    """Vectorised float reduction; ``x`` has shape (d, ...)."""
    law = group_law(alg)
    x = [np.asarray(c, dtype=float) for c in x]
    lo, hi = (-0.5, 0.5) if centered else (0.0, 1.0)
    for i in range(alg.dim):
        n = np.floor(x[i] + 0.5) if centered else np.floor(x[i])
        x = list(law.left(i, -n, x, False))
        for _ in range(2):
            over = x[i] >= hi
            under = x[i] < lo
            if not (over.any() or under.any()):
                break
            fix = np.where(over, -1.0, 0.0) + np.where(under, 1.0, 0.0)
            x = list(law.left(i, fix, x, False))
    return np.array(x)


def word_element(alg, word):
    return GroupElement.make(alg, [Fraction(n) for n in word], "exact")


def manifold_distance(g: GroupElement, h: GroupElement) -> float:
    """Sup norm of the centered reduction of h g^{-1}; zero iff Gamma g = Gamma h."""
    q = multiply(h, inverse(g))
    r, _ = _reduce(g.alg, q.coords, q.exact, centered=True)
    return float(max(abs(c) for c in r.coords))


def manifold_distance_array(alg, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    law = group_law(alg)
    q = law.mul(list(y), list(law.inv(list(x), False)), False)
    r = reduce_array(alg, np.array(q), centered=True)
    return np.max(np.abs(r), axis=0)


# ---------------------------------------------------------------------------
# flow


def _exp_float(alg, x_alpha: LieVector, t):
    law = group_law(alg)
    v = x_alpha.to_float().array()
    return np.array(law.second(list(np.multiply.outer(v, t)) if np.ndim(t) else list(v * t), False))


def flow_step(x: GroupElement, x_alpha: LieVector, t) -> GroupElement:
    """x exp(t X) reduced mod Gamma."""
    alg = x.alg
    law = group_law(alg)
    if x.exact:
        if isinstance(t, float):
            raise FlavorError("exact point with float time")
        vx = x_alpha.to_exact()
        e = law.second([c * as_fraction(t) for c in vx.coeffs], True)
    else:
        vx = x_alpha.to_float()
        e = law.second([c * float(t) for c in vx.coeffs], False)
    y = law.mul(x.coords, e, x.exact)
    return _reduce(alg, y, x.exact)[0]


def torus_projection(x: GroupElement):
    """First-layer coordinates mod 1 (the projected linear flow lives here)."""
    idx = [i for i in range(x.alg.dim) if x.alg.layers[i] == 1]
    if x.exact:
        return tuple(x.coords[i] - math.floor(x.coords[i]) for i in idx)
    return tuple(float(x.coords[i]) % 1.0 for i in idx)


def flow_frequency(x_alpha: LieVector, alg):
    idx = [i for i in range(alg.dim) if alg.layers[i] == 1]
    return tuple(x_alpha[i] for i in idx)


# ---------------------------------------------------------------------------
# section and return map


@dataclass(frozen=True)
class SectionPoint:
    """Gamma exp(theta xi) exp(sum_i s_i eta_i), with s in first-kind coordinates of I."""
    theta: object
    s: tuple

    def to_float(self):
        return SectionPoint(float(self.theta), tuple(float(v) for v in self.s))


def section_embed(alg, p: SectionPoint, exact=None) -> GroupElement:
    if exact is None:
        exact = isinstance(p.theta, (int, Fraction)) and all(isinstance(v, (int, Fraction)) for v in p.s)
    law = group_law(alg)
    full = [0] * alg.dim
    for i, v in zip(alg.ideal, p.s):
        full[i] = as_fraction(v) if exact else float(v)
    srest = law.second(full, exact)
    coords = list(srest)
    coords[alg.xi] = as_fraction(p.theta) if exact else float(p.theta)
    # exp(theta xi) exp(S): xi is e_0 and S has no xi component, so the
    # second-kind coordinates are (theta, coords of exp(S))
    if alg.xi != 0:
        raise AlgebraError("section embedding assumes xi is the first basis element")
    return GroupElement(alg, tuple(coords), "exact" if exact else "float")


def section_coords(g: GroupElement) -> SectionPoint:
    """Inverse of section_embed for a point given in second-kind coordinates."""
    alg = g.alg
    law = group_law(alg)
    rest = list(g.coords)
    theta = rest[0]
    rest[0] = rest[0] * 0
    u = law.first(rest, g.exact)
    return SectionPoint(theta, tuple(u[i] for i in alg.ideal))


def _require_normalized(alg, x_alpha):
    if x_alpha[alg.xi] != 1:
        raise ValueError("return map needs the xi-frequency normalised to 1")


def return_map_unreduced(alg, p: SectionPoint, x_alpha: LieVector, r) -> GroupElement:
    """exp(theta xi) exp(S) exp(r X) as exact second-kind coordinates (a polynomial in r)."""
    _require_normalized(alg, x_alpha)
    law = group_law(alg)
    ex = section_embed(alg, SectionPoint(as_fraction(p.theta), tuple(as_fraction(v) for v in p.s)), True)
    vx = x_alpha.to_exact()
    e = law.second([c * r for c in vx.coeffs], True)
    return GroupElement(alg, tuple(law.mul(ex.coords, e, True)), "exact")


def return_map(alg, p: SectionPoint, x_alpha: LieVector, r: int, check=False, tol=1e-9):
    """Phi^r on the transverse section through the closed form.

    The closed form writes exp(theta xi) exp(S) exp(rX) = exp((theta + r) xi) exp(S_r)
    with S_r = BCH(BCH(-r xi, S), r X) in I, drops the lattice element
    exp(r xi) and reduces.  Computed exactly from the Fraction values of the
    inputs.  With ``check=True`` the result is compared with r direct flow
    steps and a mismatch raises.
    """
    r = int(r)
    _require_normalized(alg, x_alpha)
    vx = x_alpha.to_exact()
    s_full = [Fraction(0)] * alg.dim
    for i, v in zip(alg.ideal, p.s):
        s_full[i] = as_fraction(v)
    xi = [Fraction(0)] * alg.dim
    xi[alg.xi] = Fraction(-r)
    step1 = bch_raw(alg, xi, s_full)
    s_r = bch_raw(alg, step1, [c * r for c in vx.coeffs])
    if s_r[alg.xi] != 0:
        raise ReturnMapMismatch("S_r left the ideal")
    theta = as_fraction(p.theta)
    g = section_embed(alg, SectionPoint(theta, tuple(s_r[i] for i in alg.ideal)), True)
    red, _ = _reduce(alg, g.coords, True)
    out = section_coords(red)
    if check:
        direct = iterate_return(alg, p.to_float(), x_alpha, r)
        err = manifold_distance(section_embed(alg, out.to_float(), False), direct)
        if err > tol:
            raise ReturnMapMismatch(f"closed form and iteration differ by {err:.3e} at r={r}")
    exact_in = isinstance(p.theta, (int, Fraction)) and all(isinstance(v, (int, Fraction)) for v in p.s)
    return out if exact_in else out.to_float()


def iterate_return(alg, p: SectionPoint, x_alpha: LieVector, r: int) -> GroupElement:
    """|r| direct float flow steps of length +-1, reducing every step."""
    law = group_law(alg)
    g = section_embed(alg, p.to_float(), False)
    vx = x_alpha.to_float()
    sgn = 1.0 if r >= 0 else -1.0
    e = law.second([c * sgn for c in vx.coeffs], False)
    x = g.coords
    steps = _unit_steps(alg, x, e, _step_low_word(x_alpha, int(sgn)))
    for _ in range(abs(int(r))):
        x = next(steps)
    return GroupElement(alg, tuple(x), "float")


def _unit_steps(alg, x, e, e_lo=None):
    """Successive reduced points x e, x e^2, ... in float.

    First-layer coordinates just add under the group law, so their rounding
    error (and the low word ``e_lo`` of the step itself) is carried in a
    compensation term.  Without this the error fed into the k-th layer
    grows like r^k.
    """
    law = group_law(alg)
    first = [i for i in range(alg.dim) if alg.layers[i] == 1]
    lo = [0.0] * alg.dim
    e_lo = [0.0] * alg.dim if e_lo is None else list(e_lo)
    x = list(x)
    while True:
        y = list(law.mul(x, e, False))
        for i in first:
            s, err = _two_sum(x[i], e[i])
            lo[i] += err + e_lo[i]
            y[i] = s
        red, word = _reduce(alg, y, False)
        x = list(red.coords)
        for i in first:
            s, err = _two_sum(y[i], -float(word[i]))
            t = s + (lo[i] + err)
            lo[i] = (lo[i] + err) - (t - s)
            x[i] = t
        yield x


def _two_sum(a, b):
    s = a + b
    bp = s - a
    return s, (a - (s - bp)) + (b - bp)


def _step_low_word(x_alpha: LieVector, sgn):
    """Float low words of the exact step exp(sgn X) on the first layer."""
    ex = x_alpha.to_exact() if x_alpha.flavor == "exact" else None
    if ex is None:
        return None
    return [float(sgn * (c - Fraction(float(c)))) for c in ex.coeffs]


def return_map_error(alg, p: SectionPoint, x_alpha: LieVector, r_values):
    """Sup over r of the manifold distance between closed form and iteration.

    Iterates once through the r values in order (both signs handled), so the
    cost is max|r| steps rather than sum |r|.
    """
    law = group_law(alg)
    vx = x_alpha.to_float()
    worst = 0.0
    for sgn in (1, -1):
        rs = sorted(r for r in r_values if (r > 0 if sgn > 0 else r < 0) or (r == 0 and sgn > 0))
        rs = sorted(rs, key=abs)
        e = law.second([c * float(sgn) for c in vx.coeffs], False)
        x = section_embed(alg, p.to_float(), False).coords
        steps = _unit_steps(alg, x, e, _step_low_word(x_alpha, sgn))
        cur = 0
        for r in rs:
            while cur < abs(r):
                x = next(steps)
                cur += 1
            closed = return_map(alg, p, x_alpha, r)
            cg = section_embed(alg, closed.to_float(), False)
            worst = max(worst, manifold_distance(cg, GroupElement(alg, tuple(x), "float")))
    return worst


# ---------------------------------------------------------------------------
# orbit engine


def orbit_unit_points(alg, x0: GroupElement, x_alpha: LieVector, n_units, block=1024):
    """Reduced points x0 exp(r X), r = 0..n_units-1, as an array (d, n_units).

    Block starts are computed exactly in Fractions; inside a block points
    advance by float unit steps, all blocks in parallel, re-reducing at
    every step, so the error never accumulates over more than ``block`` steps.
    """
    law = group_law(alg)
    d = alg.dim
    nb = -(-n_units // block)
    vx = x_alpha.to_exact()
    xe = x0.to_exact().coords
    starts = np.empty((d, nb))
    for b in range(nb):
        r0 = b * block
        e = law.second([c * r0 for c in vx.coeffs], True)
        g = _reduce(alg, law.mul(xe, e, True), True)[0]
        starts[:, b] = [float(c) for c in g.coords]
    step = law.second(list(vx.to_float().array()), False)
    step = [np.full(nb, s) for s in step]
    out = np.empty((d, nb, block))
    cur = starts
    for j in range(block):
        out[:, :, j] = cur
        if j + 1 < block:
            cur = reduce_array(alg, np.array(law.mul(list(cur), step, False)))
    return out.reshape(d, nb * block)[:, :n_units]


def lift_along(alg, points: np.ndarray, x_alpha: LieVector, u: np.ndarray) -> np.ndarray:
    """points (d, n) flowed by each u (m,), reduced: shape (d, n, m)."""
    law = group_law(alg)
    e = law.second(list(np.multiply.outer(x_alpha.to_float().array(), u)), False)
    pts = [p[:, None] for p in points]
    ee = [np.broadcast_to(c[None, :], (points.shape[1], len(u))) if np.ndim(c) else c for c in e]
    y = law.mul(pts, ee, False)
    y = [np.broadcast_to(c, (points.shape[1], len(u))) for c in y]
    return reduce_array(alg, np.array(y))


# ---------------------------------------------------------------------------
# lattice gap


@dataclass
class LatticeGap:
    c_gamma: float
    injectivity: Fraction
    minimizer: tuple
    words_checked: int


def lattice_gap(alg, radius=2, scale=1, injectivity=Fraction(1, 2)):
    """Smallest sup-norm of log(gamma) over nontrivial lattice words with |n_i| <= radius.

    ``scale`` enumerates the sublattice scale * Z^d instead (which is a
    subgroup for the built-in bases with integral group law).  The
    injectivity radius is the registered analytic value for the section
    basis.
    """
    lattice(alg)
    law = group_law(alg)
    best = None
    arg = None
    count = 0
    for word in itertools.product(range(-radius, radius + 1), repeat=alg.dim):
        if not any(word):
            continue
        count += 1
        u = law.first([Fraction(scale * n) for n in word], True)
        v = max(abs(c) for c in u)
        if best is None or v < best:
            best, arg = v, word
    if best is None:
        raise LatticeError("enumeration budget exhausted before any nontrivial word")
    return LatticeGap(float(best), injectivity, tuple(scale * n for n in arg), count)


# ---------------------------------------------------------------------------
# orbit dumps


def dump_orbit(path, times, coords, fmt="bin", manifest=None):
    """Write records (t, x_1..x_d) as little-endian float64 or CSV, plus a manifest."""
    path = Path(path)
    times = np.asarray(times, dtype="<f8")
    data = np.column_stack([times, np.asarray(coords, dtype="<f8").T]).astype("<f8")
    if fmt == "bin":
        path.write_bytes(data.tobytes())
    elif fmt == "csv":
        with open(path, "w") as fh:
            fh.write("t," + ",".join(f"x{i}" for i in range(data.shape[1] - 1)) + "\n")
            for row in data:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        raise ValueError("fmt must be 'bin' or 'csv'")
    if manifest is not None:
        mpath = path.with_suffix(path.suffix + ".manifest.json")
        mpath.write_text(json.dumps({**manifest, "columns": data.shape[1], "format": fmt,
                                     "records": int(data.shape[0])}, indent=2, sort_keys=True))
    return path


def load_orbit(path, dim):
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f8")
    return raw.reshape(-1, dim + 1)
