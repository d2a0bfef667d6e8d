"""Sparse multivariate polynomials with Fraction coefficients.

Just enough to push symbolic coordinates through the BCH series and compile
the resulting group law into fast evaluators.
"""
from fractions import Fraction


class Poly:
    __slots__ = ("terms", "nvars")

    def __init__(self, terms, nvars):
        self.terms = {m: c for m, c in terms.items() if c != 0}
        self.nvars = nvars

    @staticmethod
    def const(c, nvars):
        return Poly({(0,) * nvars: Fraction(c)}, nvars)

    @staticmethod
    def var(i, nvars):
        m = [0] * nvars
        m[i] = 1
        return Poly({tuple(m): Fraction(1)}, nvars)

    def _lift(self, other):
        if isinstance(other, Poly):
            return other
        return Poly.const(other, self.nvars)

    def __add__(self, other):
        other = self._lift(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0) + c
        return Poly(out, self.nvars)

    __radd__ = __add__

    def __neg__(self):
        return Poly({m: -c for m, c in self.terms.items()}, self.nvars)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Poly):
            if other == 0:
                return Poly({}, self.nvars)
            f = Fraction(other)
            return Poly({m: c * f for m, c in self.terms.items()}, self.nvars)
        out = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                out[m] = out.get(m, 0) + c1 * c2
        return Poly(out, self.nvars)

    __rmul__ = __mul__

    def __pow__(self, n):
        out = Poly.const(1, self.nvars)
        for _ in range(n):
            out = out * self
        return out

    def is_zero(self):
        return not self.terms

    def degree(self):
        return max((sum(m) for m in self.terms), default=0)

    def compose(self, subs, nvars):
        """Substitute polynomial ``subs[i]`` (in ``nvars`` variables) for variable i."""
        out = Poly({}, nvars)
        cache = {}
        for m, c in self.terms.items():
            term = Poly.const(c, nvars)
            for i, e in enumerate(m):
                if e:
                    key = (i, e)
                    if key not in cache:
                        cache[key] = subs[i] ** e
                    term = term * cache[key]
            out = out + term
        return out

    def evaluate(self, values):
        tot = 0
        for m, c in self.terms.items():
            t = c
            for v, e in zip(values, m):
                if e:
                    t = t * v ** e
            tot = tot + t
        return tot

    def __repr__(self):
        return f"Poly({self.terms})"


def compile_polys(polys, nvars, arg_names=None, exact=True):
    """Compile a list of polynomials into ``f(*args) -> tuple``.

    Exact mode keeps Fraction constants (works on Fraction/int inputs and is
    exact); float mode turns constants into floats (use with numpy arrays).
    """
    names = arg_names or [f"v{i}" for i in range(nvars)]
    consts = []
    exprs = []
    for p in polys:
        parts = []
        for m, c in sorted(p.terms.items()):
            factors = []
            for name, e in zip(names, m):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}**{e}")
            if c == 1 and factors:
                parts.append("*".join(factors))
                continue
            if exact and c.denominator == 1:
                cs = f"{c.numerator}"
            else:
                consts.append(c if exact else float(c))
                cs = f"_c[{len(consts) - 1}]"
            parts.append("*".join([cs] + factors))
        if not parts:
            exprs.append("_zero")
        else:
            exprs.append(" + ".join(parts))
    src = f"def _f({', '.join(names)}):\n    _zero = {names[0]} * 0\n    return ({', '.join(exprs)},)\n"
    ns = {"_c": consts}
    exec(src, ns)
    fn = ns["_f"]
    fn.source = src
    return fn
