import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nilflow_lab import algebra as A
from nilflow_lab import nilmanifold as NM
from nilflow_lab import width as W

GOLDEN = "(sqrt5-1)/2"
H = A.heisenberg()
X0 = NM.GroupElement.make(H, [0.1234, 0.5678, 0.9012])


def fibs(limit):
    out, a, b = [], 1, 2
    while a <= limit:
        out.append(a)
        a, b = b, a + b
    return set(out)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-0.6, 0.6), min_size=3, max_size=3),
       st.lists(st.floats(0, 1), min_size=3, max_size=3),
       st.floats(1, 1e4), st.floats(1, 1e4))
def test_scaled_distances_monotone_in_L(s, rho, L1, L2):
    S = np.array(s)[:, None]
    rho = np.array(rho)
    lo, hi = sorted((L1, L2))
    e1, d1, _ = W.scaled_distances(S, rho, lo, 1)
    e2, d2, _ = W.scaled_distances(S, rho, hi, 1)
    assert e1[0] <= e2[0] <= W.DEFAULT_I and d1[0] <= d2[0] <= W.DEFAULT_I


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-12, 0.5))
def test_dyadic_class_interval(delta):
    j = int(W.dyadic_class(delta))
    I = W.DEFAULT_I
    assert 2.0 ** -(j + 1) * I < delta <= 2.0 ** -j * I


def test_dyadic_class_excluded():
    assert W.dyadic_class(0.0) == -1 and W.dyadic_class(0.7) == -1
    assert W.dyadic_class(0.25) == 1 and W.dyadic_class(0.2500001) == 0


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-9, 0.25), st.integers(2, 6), st.integers(1, 2))
def test_cutoff_J_brute_force(eps, a, n):
    if a <= n:
        return
    rhs = (Fraction(2) / Fraction(eps)) ** n
    j = 0
    while Fraction(2) ** ((j + 1) * (a - n)) <= rhs:
        j += 1
    assert W.cutoff_J(eps, a, n) == j


def test_h_weights_by_hand():
    # a=2, n=1: min(2^j, 2/eps)
    assert W.h_weights(0.1, 3, 2, 1) == 8.0
    assert W.h_weights(0.1, 6, 2, 1) == 20.0
    assert W.h_weights(0.1, 0, 2, 1) == 0.0
    assert W.h_weights(0.3, 3, 2, 1) == 0.0


def test_width_from_H():
    assert W.width_from_H(1.0, 2) == 0.0625
    assert W.H_from_samples([[], [(0.1, 3)]], 2, 1).tolist() == [1.0, 9.0]


def test_displacement_reconstructs_point():
    rng = np.random.default_rng(5)
    y = rng.random((3, 20))
    z = rng.random((3, 20))
    s = W.displacement(H, y, z)
    law = NM.group_law(H)
    back = np.array(law.mul(list(y), list(np.array(law.second(list(s), False))), False))
    assert NM.manifold_distance_array(H, back, z).max() < 1e-12


def test_no_returns_gives_extremal_width():
    rep = W.width_lower_bound(H, GOLDEN, X0, 1, 50)
    assert rep.events == [] and rep.w == (W.DEFAULT_I / 2) ** rep.a


@pytest.mark.parametrize("T,L", [(1, 400), (5, 1000), (5, 2000)])
def test_width_never_exceeds_extremal(T, L):
    rep = W.width_lower_bound(H, GOLDEN, X0, T, L, samples_per_unit=2)
    cap = (W.DEFAULT_I / 2) ** rep.a
    assert rep.w <= cap
    assert (rep.w == cap) == (rep.active_samples == 0)
    assert abs(sum(rep.case_fractions.values()) - 1) < 1e-12


def test_fibonacci_returns_small():
    # eps = L |r alpha| <= 1/4 needs r >= 4L/sqrt5 roughly
    ev = W.close_returns(H, GOLDEN, X0, 5, 1000)
    rs = {abs(e.r) for e in ev}
    assert rs == {2584, 4181}


def test_events_classified_once():
    ev = W.close_returns(H, GOLDEN, X0, 5, 2000)
    assert ev
    for e in ev:
        if e.j is None:
            assert e.delta == 0 or e.delta > W.DEFAULT_I
        else:
            assert 2.0 ** -(e.j + 1) * W.DEFAULT_I < e.delta <= 2.0 ** -e.j * W.DEFAULT_I


def test_rho_validation():
    with pytest.raises(A.AlgebraError):
        W.close_returns(H, GOLDEN, X0, 1, 10, rho=[0.5])
    with pytest.raises(A.AlgebraError):
        W.close_returns(H, GOLDEN, X0, 1, 10, rho=[-1, 0.5])


def test_rescaling_times():
    N, h, ts = W.rescaling_times(math.exp(3.5))
    assert N == 3 and abs(h - 3.5 / 3) < 1e-15 and abs(ts[-1] - math.exp(3.5)) < 1e-9


def test_good_point_small():
    rep = W.good_point_check(H, GOLDEN, X0, schedule=[1.0, 5.0])
    assert rep.good
    assert all(m[3] >= m[5] and m[4] >= m[5] for m in rep.margins)


T3 = A.triangular(3)
ALPHA3 = "sqrt2-1,sqrt3-1"


@pytest.mark.parametrize("t", [1.0, 2.0])
def test_step3_returns_toral_condition(t):
    import sympy as sp
    c = W.step3_c_gamma(T3)
    q, r, x2, x3 = W.step3_returns(ALPHA3, 500, t, c)
    assert len(q)
    for qk in q[:: max(1, len(q) // 25)].tolist():
        for a in (sp.sqrt(2) - 1, sp.sqrt(3) - 1):
            v = sp.N(qk * a, 40)
            d = abs(float(v - sp.floor(v + sp.Rational(1, 2))))
            assert d <= math.exp(-t / 3) * c / 2 + 1e-15


def test_step3_components_brute_force():
    a, b, T, half = (0.3, -0.2), (0.7, 1.9), 6.0, 0.1
    comps = W._components(a, b, T, half)
    s = np.linspace(0, T, 60001)
    v1 = a[0] + b[0] * s
    v2 = a[1] + b[1] * s
    inside = (np.abs(v1 - np.round(v1)) <= half) & (np.abs(v2 - np.round(v2)) <= half)
    mark = np.zeros_like(inside)
    for lo, hi, *_ in comps:
        mark |= (s >= lo) & (s <= hi)
    assert (mark == inside).mean() > 0.9999


def test_step3_best_center_minimises():
    a1, b1, a2, b2 = 0.05, 0.8, -0.03, -0.5
    s = W._best_center(a1, b1, a2, b2, -1.0, 1.0)
    grid = np.linspace(-1, 1, 200001)
    f = np.maximum(np.abs(a1 + b1 * grid), np.abs(a2 + b2 * grid))
    assert max(abs(a1 + b1 * s), abs(a2 + b2 * s)) <= f.min() + 1e-12


def test_step3_empty_return_set():
    x = NM.GroupElement.make(T3, [0.2] * 6)
    rec = W.step3_width(T3, ALPHA3, x, 0.06, 3.0)
    assert rec.returns == [] and rec.avg_inv_w == rec.baseline_inv_w == 256.0


def test_step3_rejects_other_algebra():
    with pytest.raises(A.AlgebraError):
        W.step3_width(H, GOLDEN, X0, 10, 1.0)


def test_csv_outputs(tmp_path):
    ev = W.close_returns(H, GOLDEN, X0, 5, 1000)
    W.write_events_csv(tmp_path / "e.csv", ev, ["X2", "Z"])
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0].startswith("r,s_X2,s_Z") and len(lines) == len(ev) + 1
