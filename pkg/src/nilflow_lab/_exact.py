"""Small exact linear algebra over the rationals.

Everything here works on lists of lists of ``Fraction``.  Matrices are tiny
(dimension well under a hundred) so plain Gauss-Jordan is fast enough and
keeps the results exact.
"""
from fractions import Fraction


def as_fraction(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x)
    return Fraction(str(x))


def rref(rows, ncols=None):
    """Reduced row echelon form.  Returns (rows, pivot_columns)."""
    m = [[as_fraction(v) for v in row] for row in rows]
    if not m:
        return [], []
    ncols = len(m[0]) if ncols is None else ncols
    pivots = []
    r = 0
    for c in range(ncols):
        piv = None
        for i in range(r, len(m)):
            if m[i][c] != 0:
                piv = i
                break
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        inv = 1 / m[r][c]
        m[r] = [v * inv for v in m[r]]
        for i in range(len(m)):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == len(m):
            break
    return m[:r], pivots


def rank(rows):
    if not rows:
        return 0
    return len(rref(rows)[1])


def nullspace(rows, ncols):
    """Basis of {x : rows @ x = 0}."""
    if not rows:
        return [[Fraction(int(i == j)) for j in range(ncols)] for i in range(ncols)]
    red, piv = rref(rows, ncols)
    free = [c for c in range(ncols) if c not in piv]
    basis = []
    for f in free:
        v = [Fraction(0)] * ncols
        v[f] = Fraction(1)
        for row, p in zip(red, piv):
            v[p] = -row[f]
        basis.append(v)
    return basis


def complement(rows, ncols):
    """Standard basis vectors completing span(rows) to the full space."""
    red, piv = rref(rows, ncols) if rows else ([], [])
    return [[Fraction(int(i == c)) for i in range(ncols)]
            for c in range(ncols) if c not in piv]


def solve_square(a, b):
    """Solve a x = b exactly for a square invertible a."""
    n = len(a)
    aug = [list(map(as_fraction, row)) + [as_fraction(bi)] for row, bi in zip(a, b)]
    red, piv = rref(aug, n)
    if piv != list(range(n)):
        raise ZeroDivisionError("singular system")
    return [row[n] for row in red]


def floor_frac(x):
    """Exact floor for Fraction or int."""
    return x.numerator // x.denominator if isinstance(x, Fraction) else int(x) // 1
