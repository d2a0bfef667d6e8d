"""Close returns, rescaled displacements, dyadic classes and width lower bounds.

A close return of x at index r compares x exp(rX) with x inside a local
chart x exp(sum_i s_i Y_i) over the ideal.  The chart displacement s is
found by centered lattice reduction of x exp(rX) x^{-1} followed by
conjugating back; coordinates of s are first-kind.  Distances are rescaled
by L^{rho_i} and capped at the chart size I.

The width reported here is the constructive lower bound coming from the
explicit open-set construction, not the supremum over all admissible sets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ._io import write_csv
from .algebra import AlgebraError, GradedNilAlgebra, LieVector, scaling_data, triangular
from .diophantine import FrequencyVector, parse_alpha, signed_frac
from .nilmanifold import (GroupElement, _reduce, group_law, lattice, lattice_gap, lift_along,
                          orbit_unit_points, reduce_array)

DEFAULT_I = 0.5


class ChartError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# events


@dataclass
class CloseReturnEvent:
    r: int
    s: tuple
    eps: float
    delta: float
    j: int | None = None
    capped: bool = False
    J: float | None = None
    h: float = 0.0

    def to_row(self):
        return [self.r, *self.s, self.eps, self.delta, "" if self.j is None else self.j,
                int(self.capped)]


def _setup(alg, alpha, rho):
    alpha = parse_alpha(alpha)
    x_alpha = alg.flow_vector(alpha.values)
    etas = alg.ideal
    first = [p for p, i in enumerate(etas) if alg.layers[i] == 1]
    if first != list(range(len(first))):
        raise AlgebraError("first-layer ideal elements must come first in the basis")
    if isinstance(rho, str):
        rv = scaling_data(alg, x_alpha.to_exact(), rho).rho
        rvec = np.array([float(rv[alg.labels[i]]) for i in etas])
    elif isinstance(rho, dict):
        rvec = np.array([float(rho[alg.labels[i]]) for i in etas])
    else:
        rvec = np.array([float(v) for v in rho])
        if len(rvec) != len(etas):
            raise AlgebraError(f"rho needs {len(etas)} entries")
    if (rvec < 0).any():
        raise AlgebraError("rho entries must be nonnegative")
    return alpha, x_alpha, rvec, len(first)


def displacement(alg, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """First-kind s over the ideal with Gamma z = Gamma y exp(s.Y), chosen nearest the identity.

    ``y`` and ``z`` have shape (d, M); returns (d, M) first-kind coordinates
    (the xi row vanishes when z lies on the same section as y).
    """
    law = group_law(alg)
    yi = law.inv(list(y), False)
    q = np.array(law.mul(list(z), list(yi), False))
    u = reduce_array(alg, q, centered=True)
    w = law.mul(list(yi), list(law.mul(list(u), list(y), False)), False)
    return np.array(law.first(list(w), False), dtype=float)


def scaled_distances(S: np.ndarray, rho: np.ndarray, L, n, I=DEFAULT_I):
    """(eps, delta, capped) from ideal displacements S of shape (a, M)."""
    a = S.shape[0]
    capped = (np.abs(S) > I / 2).any(axis=0)
    scale = np.power(float(L), rho)[:, None]
    d = np.minimum(I, scale * np.abs(S))
    d[:, capped] = I
    eps = d[:n].max(axis=0)
    delta = d[n:].max(axis=0) if a > n else np.zeros(S.shape[1])
    return eps, delta, capped


def dyadic_class(delta, I=DEFAULT_I):
    """j with delta in (2^-(j+1) I, 2^-j I]; -1 when delta is 0 or above I."""
    delta = np.asarray(delta, dtype=float)
    with np.errstate(divide="ignore"):
        ratio = I / delta
    _, e = np.frexp(ratio)
    j = e.astype(np.int64) - 1
    bad = (delta <= 0) | (delta > I) | ~np.isfinite(ratio)
    return np.where(bad, -1, j)


def cutoff_J(eps, a, n):
    """Largest integer j >= 0 with 2^(j(a-n)) <= (2/eps)^n (exact comparison)."""
    if a == n:
        return math.inf
    rhs = Fraction(2) / Fraction(float(eps))
    rhs = rhs ** n
    j = max(0, int(n * math.log2(float(rhs) ** (1 / n)) / (a - n)) - 1)
    while Fraction(2) ** ((j + 1) * (a - n)) <= rhs:
        j += 1
    while j > 0 and Fraction(2) ** (j * (a - n)) > rhs:
        j -= 1
    return j


def _cutoff_vec(eps, a, n):
    if a == n:
        return np.full(np.shape(eps), np.inf)
    with np.errstate(divide="ignore"):
        v = n * np.log2(2.0 / np.asarray(eps, dtype=float)) / (a - n)
    return np.floor(v + 1e-12)


def h_weights(eps, j, a, n, I=DEFAULT_I):
    """Weights min{2^(j(a-n)), (2/eps)^n} for class j >= 1 and eps <= I/2, else 0."""
    eps = np.asarray(eps, dtype=float)
    j = np.asarray(j)
    active = (j >= 1) & (eps <= I / 2)
    with np.errstate(divide="ignore", over="ignore"):
        w = np.minimum(np.power(2.0, j * (a - n)), np.power(2.0 / eps, n))
    return np.where(active, w, 0.0)


def _orbit_point(alg, x: GroupElement, x_alpha: LieVector, r):
    """Reduced x exp(rX), exact in the rational value of the float flow vector."""
    law = group_law(alg)
    e = law.second([c * r for c in x_alpha.to_exact().coeffs], True)
    g = _reduce(alg, law.mul(x.to_exact().coords, e, True), True)[0]
    return np.array([float(c) for c in g.coords])


def _candidates(alpha: FrequencyVector, rmax, rho, L, n, I):
    r = np.arange(1, rmax + 1, dtype=np.int64)
    eps = np.zeros(rmax)
    for p in range(n):
        s = np.abs(signed_frac(r, alpha.comps[p]))
        eps = np.maximum(eps, np.minimum(I, float(L) ** rho[p] * s))
    keep = r[eps <= I / 2 * (1 + 1e-9)]
    return np.concatenate([-keep[::-1], keep])


def close_returns(alg: GradedNilAlgebra, alpha, x: GroupElement, T, L, rho="homogeneous",
                  I=DEFAULT_I, tol=1e-7):
    """Every r with 1 <= |r| <= ceil(TL) and eps_{r,L}(x) <= I/2, with full displacement."""
    alpha, x_alpha, rvec, n = _setup(alg, alpha, rho)
    lattice(alg)
    rmax = int(math.ceil(float(T) * float(L)))
    cand = _candidates(alpha, rmax, rvec, L, n, I)
    events = []
    if not len(cand):
        return events
    y = np.array([float(c) for c in x.coords])[:, None] * np.ones(len(cand))
    z = np.column_stack([_orbit_point(alg, x, x_alpha, int(r)) for r in cand])
    D = displacement(alg, y, z)
    S = D[list(alg.ideal)]
    eps, delta, capped = scaled_distances(S, rvec, L, n, I)
    # first-layer displacement is the toral one, independent of x
    for p in range(n):
        tor = signed_frac(cand, alpha.comps[p])
        bad = (~capped) & (np.abs(S[p] - tor) > tol)
        if bad.any():
            raise ChartError(f"first-layer displacement disagrees with the toral distance at r={cand[bad][0]}")
    j = dyadic_class(delta, I)
    a = S.shape[0]
    for k, r in enumerate(cand):
        if eps[k] > I / 2:
            continue
        jj = int(j[k]) if j[k] >= 0 else None
        ev = CloseReturnEvent(int(r), tuple(float(v) for v in S[:, k]), float(eps[k]), float(delta[k]),
                              jj, bool(capped[k]))
        events.append(ev)
    ap_classify(events, a, n, I)
    return events


@dataclass
class APClass:
    r: int
    j: int | None
    J: float
    h: float
    case: str


def ap_classify(events, a, n, I=DEFAULT_I):
    """Attach the dyadic class cutoff J and the weight h to each event (in place)."""
    out = []
    for ev in events:
        if ev.eps > I / 2:
            ev.j, ev.J, ev.h = None, None, 0.0
            continue
        ev.J = cutoff_J(ev.eps, a, n) if ev.eps > 0 else math.inf
        if ev.j is None or ev.j < 1:
            ev.h = 0.0
            case = "none"
        else:
            ev.h = float(h_weights(ev.eps, ev.j, a, n, I))
            case = "2-1" if ev.j > ev.J else "2-2"
        out.append(APClass(ev.r, ev.j, ev.J, ev.h, case))
    return out


# ---------------------------------------------------------------------------
# width lower bound


@dataclass
class WidthReport:
    x: tuple
    T: float
    L: float
    rho: tuple
    I: float
    a: int
    n: int
    events: list
    h_average: float
    w: float
    case_fractions: dict
    samples: int
    active_samples: int
    label: str = "constructive lower bound"

    def to_dict(self):
        return {"x": list(self.x), "T": self.T, "L": self.L, "rho": list(self.rho), "I": self.I,
                "a": self.a, "n": self.n, "h_average": self.h_average, "w": self.w,
                "case_fractions": self.case_fractions, "samples": self.samples,
                "active_samples": self.active_samples, "label": self.label,
                "events": [{"r": e.r, "s": list(e.s), "eps": e.eps, "delta": e.delta, "j": e.j,
                            "J": e.J, "h": e.h, "capped": e.capped} for e in self.events]}


def width_from_H(h_average, a, I=DEFAULT_I):
    """w = [(2/I)^a * average of H]^{-1}."""
    return 1.0 / ((2.0 / I) ** a * float(h_average))


def H_from_samples(sample_events, a, n, I=DEFAULT_I):
    """Per-sample H = 1 + sum of h weights from lists of (eps, j) pairs."""
    out = np.ones(len(sample_events))
    for k, evs in enumerate(sample_events):
        for eps, j in evs:
            if j is not None:
                out[k] += float(h_weights(eps, j, a, n, I))
    return out


def width_lower_bound(alg: GradedNilAlgebra, alpha, x: GroupElement, T, L, rho="homogeneous",
                      I=DEFAULT_I, samples_per_unit=8):
    """Average of H_L^T along x exp(tLX), t in [0, T], and the width bound it implies.

    The orbit is sampled at ``samples_per_unit`` midpoints per unit of flow
    time; at every sample all candidate returns (those whose toral part is
    already within I/2 after rescaling) are re-evaluated.
    """
    alpha, x_alpha, rvec, n = _setup(alg, alpha, rho)
    lattice(alg)
    a = len(alg.ideal)
    TL = float(T) * float(L)
    rmax = int(math.ceil(TL))
    cand = _candidates(alpha, rmax, rvec, L, n, I)
    events = close_returns(alg, alpha, x, T, L, rho, I) if len(cand) else []
    units = int(math.ceil(TL))
    offs = (np.arange(samples_per_unit) + 0.5) / samples_per_unit
    H_sum = 0.0
    count = 0
    active = 0
    cases = {"1": 0, "2-1": 0, "2-2": 0}
    if len(cand):
        pad = int(np.abs(cand).max())
        start = _orbit_point(alg, x, x_alpha, -pad)
        x0 = GroupElement.make(alg, [Fraction(float(c)) for c in start], "exact")
        P = orbit_unit_points(alg, x0, x_alpha, units + 2 * pad + 1)
    for u in offs:
        tau = np.arange(units) + u
        keep = tau < TL
        m = int(keep.sum())
        if m == 0:
            continue
        if not len(cand):
            H_sum += m
            count += m
            cases["1"] += m
            continue
        Q = lift_along(alg, P, x_alpha, np.array([u]))[:, :, 0]
        y = Q[:, pad:pad + m]
        H = np.ones(m)
        any21 = np.zeros(m, dtype=bool)
        anyact = np.zeros(m, dtype=bool)
        for r in cand:
            z = Q[:, pad + r:pad + r + m]
            S = displacement(alg, y, z)[list(alg.ideal)]
            eps, delta, _ = scaled_distances(S, rvec, L, n, I)
            j = dyadic_class(delta, I)
            h = h_weights(eps, j, a, n, I)
            act = h > 0
            H += h
            anyact |= act
            any21 |= act & (j > _cutoff_vec(eps, a, n))
        H_sum += float(math.fsum(H))
        count += m
        active += int(anyact.sum())
        cases["1"] += int((~anyact).sum())
        cases["2-1"] += int(any21.sum())
        cases["2-2"] += int((anyact & ~any21).sum())
    h_avg = H_sum / count if count else 1.0
    frac = {k: v / count for k, v in cases.items()} if count else {"1": 1.0, "2-1": 0.0, "2-2": 0.0}
    return WidthReport(tuple(float(c) for c in x.coords), float(T), float(L), tuple(rvec.tolist()),
                       float(I), a, n, events, h_avg, width_from_H(h_avg, a, I), frac, count, active)


# ---------------------------------------------------------------------------
# good points


def default_schedule(zeta, count, eps=0.1):
    """T_i = i^((1+eps)/zeta), i = 1..count."""
    return [float(i) ** ((1 + eps) / zeta) for i in range(1, count + 1)]


def rescaling_times(Ti):
    """(N_i, h_i, [T_{j,i}]) with N_i = [log T_i] and T_{j,i} = e^{j h_i}."""
    lg = math.log(Ti) if Ti >= 1 else 0.0
    N = int(math.floor(lg))
    h = lg / N if N >= 1 else 1.0
    return N, h, [math.exp(j * h) for j in range(N + 1)]


@dataclass
class GoodPointReport:
    good: bool
    w: float
    zeta: float
    schedule: list
    margins: list = field(default_factory=list)   # (i, j, T_ji, w_x, w_y, threshold)

    def to_dict(self):
        return {"good": self.good, "w": self.w, "zeta": self.zeta, "schedule": self.schedule,
                "margins": [{"i": i, "j": j, "T_ji": t, "w_x": wx, "w_y": wy, "threshold": th}
                            for i, j, t, wx, wy, th in self.margins]}


def good_point_check(alg, alpha, x: GroupElement, schedule=None, zeta=0.1, w=None, rho="homogeneous",
                     I=DEFAULT_I, samples_per_unit=4, count=2):
    """Check w_{F(T_ji)}(x, 1) and w_{F(T_ji)}(y_i, 1) against w / T_i^zeta."""
    a = len(alg.ideal)
    if w is None:
        w = (I / 2) ** a / 4
    schedule = list(schedule) if schedule is not None else default_schedule(zeta, count)
    alpha_v = parse_alpha(alpha)
    x_alpha = alg.flow_vector(alpha_v.values)
    rep = GoodPointReport(True, float(w), float(zeta), schedule)
    cache = {}

    def wb(pt, L):
        key = (tuple(pt.coords), L)
        if key not in cache:
            cache[key] = width_lower_bound(alg, alpha_v, pt, 1.0, L, rho, I, samples_per_unit).w
        return cache[key]

    for i, Ti in enumerate(schedule, start=1):
        thr = w / Ti ** zeta
        yi = GroupElement.make(alg, _orbit_point(alg, x, x_alpha, Fraction(Ti)).tolist(), "float")
        _, _, times = rescaling_times(Ti)
        for j, Tji in enumerate(times):
            wx, wy = wb(x, Tji), wb(yi, Tji)
            rep.margins.append((i, j, Tji, wx, wy, thr))
            if w > 0 and (wx < thr or wy < thr):
                rep.good = False
    return rep


# ---------------------------------------------------------------------------
# step-3 triangular widths

STEP3_X = (-1.0 / 3, -1.0 / 3)      # e^{-t/3} on the X-layer
STEP3_Y = (-1.0 / 6, -1.0 / 6)      # e^{-t/6} on the Y-layer


@dataclass
class Step3Record:
    t: float
    T: float
    c_gamma: float
    returns: list                        # (q, r, x2, x3) with q = r e^t
    dyadic: list                         # (n, count, reference)
    eps: float
    nu: float
    c_alpha: float | None
    avg_inv_w: float | None = None
    union_avg_inv_w: float | None = None
    baseline_inv_w: float = 0.0
    components: int = 0

    def to_dict(self):
        return {"t": self.t, "T": self.T, "c_gamma": self.c_gamma, "n_returns": len(self.returns),
                "dyadic": [{"n": n, "count": c, "reference": b} for n, c, b in self.dyadic],
                "eps": self.eps, "nu": self.nu, "c_alpha": self.c_alpha, "avg_inv_w": self.avg_inv_w,
                "union_avg_inv_w": self.union_avg_inv_w, "baseline_inv_w": self.baseline_inv_w,
                "components": self.components}


_C_CACHE = {}


def step3_c_gamma(alg):
    if alg.name not in _C_CACHE:
        _C_CACHE[alg.name] = lattice_gap(alg, radius=1).c_gamma
    return _C_CACHE[alg.name]


def _check_step3(alg):
    if list(alg.labels) != ["X1", "X2", "X3", "Y1", "Y2", "Z"]:
        raise AlgebraError("step3_width needs the triangular step-3 algebra")


def step3_returns(alpha, T, t, c):
    """Returns q = r e^t, |r| <= T, with both scaled toral offsets within c/2."""
    alpha = parse_alpha(alpha)
    qmax = int(math.floor(float(T) * math.exp(t)))
    q = np.arange(1, qmax + 1, dtype=np.int64)
    s2 = -signed_frac(q, alpha.comps[0]) * math.exp(t / 3)
    s3 = -signed_frac(q, alpha.comps[1]) * math.exp(t / 3)
    ok = (np.abs(s2) <= c / 2) & (np.abs(s3) <= c / 2)
    q, s2, s3 = q[ok], s2[ok], s3[ok]
    # -q gives the opposite offsets
    qq = np.concatenate([-q[::-1], q])
    x2 = np.concatenate([-s2[::-1], s2])
    x3 = np.concatenate([-s3[::-1], s3])
    return qq, qq * math.exp(-t), x2, x3


def dyadic_reference(T, c, n, t, eps):
    return float(T) * c / 2 ** n * math.exp((2 / 3 + eps / 2) * t)


def _best_center(a1, b1, a2, b2, lo, hi):
    """s in [lo, hi] minimising max(|a1+b1 s|, |a2+b2 s|), both equality branches tried."""
    cands = [lo, hi]
    if b1:
        cands.append(-a1 / b1)
    if b2:
        cands.append(-a2 / b2)
    if b1 != b2:
        cands.append((a2 - a1) / (b1 - b2))
    if b1 != -b2:
        cands.append(-(a1 + a2) / (b1 + b2))
    best, arg = None, lo
    for s in cands:
        s = min(max(s, lo), hi)
        v = max(abs(a1 + b1 * s), abs(a2 + b2 * s))
        if best is None or v < best:
            best, arg = v, s
    return arg


def _components(a, b, T, half):
    """Intervals of s in [0, T] where max_i |a_i + b_i s - m_i| <= half for some integer m."""
    out = []
    a1, a2 = a
    b1, b2 = b
    if b1 == 0:
        return out
    lo_m = math.floor(min(a1, a1 + b1 * T) - half)
    hi_m = math.ceil(max(a1, a1 + b1 * T) + half)
    for m1 in range(lo_m, hi_m + 1):
        s_a, s_b = sorted(((m1 - half - a1) / b1, (m1 + half - a1) / b1))
        s_a, s_b = max(s_a, 0.0), min(s_b, float(T))
        if s_a >= s_b:
            continue
        ya, yb = sorted((a2 + b2 * s_a, a2 + b2 * s_b))
        for m2 in range(math.floor(ya - half), math.ceil(yb + half) + 1):
            if b2:
                u_a, u_b = sorted(((m2 - half - a2) / b2, (m2 + half - a2) / b2))
            elif abs(a2 - m2) <= half:
                u_a, u_b = s_a, s_b
            else:
                continue
            lo, hi = max(s_a, u_a), min(s_b, u_b)
            if lo < hi:
                out.append((lo, hi, a1 - m1, a2 - m2))
    return out


def step3_width(alg, alpha, x: GroupElement, T, t, eps=0.1, nu=1.1, n_max=6, profile=True,
                grid_factor=8, c=None):
    """Return set, dyadic counts, displacement constant and the average of 1/w over [0, T].

    Rescaling is fixed: e^t on V, e^{-t/3} on X2, X3, e^{-t/6} on Y1, Y2,
    and 1 on Z.
    """
    _check_step3(alg)
    alpha = parse_alpha(alpha)
    if alpha.n != 2:
        raise AlgebraError("step3_width needs two frequencies")
    c = step3_c_gamma(alg) if c is None else float(c)
    q, r, x2, x3 = step3_returns(alpha, T, t, c)
    norm = np.maximum(np.abs(x2), np.abs(x3))
    dy = []
    for n in range(n_max + 1):
        cnt = int(np.count_nonzero((norm > c / 2 ** (n + 1)) & (norm <= c / 2 ** n)))
        dy.append((n, cnt, dyadic_reference(T, c, n, t, eps)))
    c_alpha = None
    if len(q):
        lower = np.exp((1 / 3 - nu / 2) * t) * np.abs(r) ** (-nu / 2)
        c_alpha = float((norm / lower).min())
    rec = Step3Record(float(t), float(T), c, list(zip(q.tolist(), r.tolist(), x2.tolist(), x3.tolist())),
                      dy, eps, nu, c_alpha)
    rec.baseline_inv_w = 1.0 / (c * (c / 16) ** 2)
    if profile:
        _profile(alg, alpha, x, T, t, c, q, x2, x3, rec, grid_factor)
    return rec


def _profile(alg, alpha, x, T, t, c, q, x2, x3, rec, grid_factor):
    base = rec.baseline_inv_w
    ds = math.exp(-5 * t / 6) / grid_factor
    ngrid = max(1, int(math.ceil(float(T) / ds)))
    ds = float(T) / ngrid
    grid = np.full(ngrid, base)
    union = 0.0
    ncomp = 0
    x_alpha = alg.flow_vector(alpha.values)
    V = x_alpha.to_float()
    Vt = V * math.exp(t)
    y0 = np.array([float(v) for v in x.coords])
    half = c / 2 * math.exp(-t / 6)
    plateau = math.exp(-5 * t / 6)
    for k, qk in enumerate(q.tolist()):
        z = _orbit_point(alg, x, x_alpha, int(qk))
        D = displacement(alg, y0[:, None], z[:, None])[:, 0]
        Dv = LieVector.floating(D)
        b = -alg.bracket(Vt, Dv).array()
        a_y = (D[3], D[4])
        b_y = (b[3], b[4])
        kappa = max(abs(x2[k]), abs(x3[k])) / 16
        for lo, hi, a1, a2 in _components(a_y, b_y, T, half):
            ncomp += 1
            s_star = _best_center(a1, b_y[0], a2, b_y[1], lo, hi)
            i0 = max(0, int(math.floor(lo / ds - 0.5)))
            i1 = min(ngrid, int(math.ceil(hi / ds + 0.5)))
            s = (np.arange(i0, i1) + 0.5) * ds
            inside = (s >= lo) & (s <= hi)
            dist = np.maximum(np.abs(s - s_star) / plateau, 1.0)
            delta = np.minimum(kappa * dist, c / 16)
            inv = np.where(inside, 1.0 / (c * delta ** 2), base)
            grid[i0:i1] = np.maximum(grid[i0:i1], inv)
            union += float(np.sum(inv[inside] - base)) * ds
    rec.avg_inv_w = float(math.fsum(grid) / ngrid)
    rec.union_avg_inv_w = base + union / float(T)
    rec.components = ncomp


@dataclass
class Step3Fit:
    C_count: float
    count_ok: bool
    count_cells: list          # (t, n, count, reference, allowed)
    C_eps: float | None
    width_ok: bool | None
    width_cells: list          # (t, avg, allowed)
    c_alpha: float | None

    def to_dict(self):
        return {"C_count": self.C_count, "count_ok": self.count_ok,
                "count_cells": [dict(zip(("t", "n", "count", "reference", "allowed"), c))
                                for c in self.count_cells],
                "C_eps": self.C_eps, "width_ok": self.width_ok,
                "width_cells": [dict(zip(("t", "avg_inv_w", "allowed"), c)) for c in self.width_cells],
                "c_alpha": self.c_alpha}


def step3_fit(records, eps=0.1):
    """Fit the counting constant and C_eps at the smallest t and test the larger ones.

    A count cell is allowed C*reference plus three Poisson standard
    deviations of that expectation.
    """
    ts = sorted({rc.t for rc in records})
    t0 = ts[0]
    ratios = [cnt / ref for rc in records if rc.t == t0 for n, cnt, ref in rc.dyadic if cnt]
    C = max(ratios) if ratios else 0.0
    cells = []
    ok = True
    for rc in records:
        for n, cnt, ref in rc.dyadic:
            lim = C * ref + 3 * math.sqrt(C * ref)
            cells.append((rc.t, n, cnt, ref, lim))
            ok &= cnt <= lim
    wrecs = [rc for rc in records if rc.avg_inv_w is not None]
    C_eps = None
    wok = None
    wcells = []
    if wrecs:
        byt = {}
        for rc in wrecs:
            byt.setdefault(rc.t, []).append(rc.avg_inv_w)
        ts_w = sorted(byt)
        C_eps = max(byt[ts_w[0]]) / math.exp(eps * ts_w[0])
        wok = True
        for tt in ts_w:
            lim = C_eps * math.exp(eps * tt)
            for v in byt[tt]:
                wcells.append((tt, v, lim))
                wok &= v <= lim * (1 + 1e-12)
    cas = [rc.c_alpha for rc in records if rc.c_alpha is not None]
    return Step3Fit(C, bool(ok), cells, C_eps, wok, wcells, min(cas) if cas else None)


# ---------------------------------------------------------------------------
# outputs


def write_events_csv(path, events, labels):
    header = ["r"] + [f"s_{l}" for l in labels] + ["eps", "delta", "j", "capped"]
    write_csv(path, header, [e.to_row() for e in events])


def write_dyadic_csv(path, records, C=1.0):
    rows = []
    for rc in records:
        for n, cnt, ref in rc.dyadic:
            rows.append([rc.t, n, cnt, C * ref, cnt / (C * ref) if C * ref else float("nan")])
    write_csv(path, ["t", "n", "count", "bound", "ratio"], rows)
