import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nilflow_lab import algebra as A
from nilflow_lab import equidist as E
from nilflow_lab import nilmanifold as NM

coef = st.fractions(min_value=-3, max_value=3, max_denominator=1000)


def test_weyl_integer_polynomial_is_one():
    assert E.weyl_sum([5, -3, 7], 1000) == pytest.approx(1.0, abs=1e-12)


def test_weyl_linear_closed_form():
    # geometric series for P(r) = r/8 over one full period and a half period
    assert abs(E.weyl_sum([0, Fraction(1, 8)], 8)) < 1e-15
    z = np.exp(2j * math.pi / 8)
    assert E.weyl_sum([0, Fraction(1, 8)], 4) == pytest.approx((1 - z ** 4) / (1 - z) / 4, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(coef, min_size=2, max_size=6), st.integers(1, 4096))
def test_weyl_kernel_matches_direct(coeffs, N):
    assert abs(E.weyl_sum(coeffs, N, block=256) - E.weyl_sum_direct(coeffs, N)) < 1e-10


@pytest.mark.slow
def test_weyl_kernel_matches_direct_large():
    rng = np.random.default_rng(7)
    for _ in range(4):
        deg = int(rng.integers(2, 6))
        cs = [Fraction(int(rng.integers(-10 ** 6, 10 ** 6)), 10 ** 6 + 3) for _ in range(deg + 1)]
        assert abs(E.weyl_sum(cs, 2 ** 20) - E.weyl_sum_direct(cs, 2 ** 20)) < 1e-10


def test_weyl_series_consistent_with_single_sums():
    cs = [0, Fraction(1, 3), Fraction(355, 1130)]
    ser = E.weyl_series(cs, [10, 100, 1000])
    for n, v in ser.items():
        assert v == pytest.approx(E.weyl_sum(cs, n), abs=1e-13)


def test_fit_decay_exact_on_power_law():
    T = [2.0 ** k for k in range(4, 16)]
    fit = E.fit_decay(T, [3.5 * t ** -0.4 for t in T])
    assert abs(fit.slope + 0.4) < 1e-12 and fit.residual < 1e-9


def test_fit_decay_needs_points():
    with pytest.raises(E.FitError):
        E.fit_decay([1, 2, 3], [1, 1, 1])


def test_bump_mean_removed_integrates_to_zero():
    f = E.PeriodizedBump((0.5, 0.5, 0.5), (0.3, 0.3, 0.3))
    g = np.linspace(0, 1, 161)[:-1] + 1 / 320
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    vals = f.evaluate(A.heisenberg(), [X.ravel(), Y.ravel(), Z.ravel()])
    assert abs(vals.mean()) < 1e-6
    assert f.raw_mean > 0


def test_bump_support_guard():
    with pytest.raises(E.ObservableError):
        E.PeriodizedBump((0.1,), (0.3,))
    E.PeriodizedBump((0.1,), (0.3,), radius=1)


def test_toral_character_closed_form():
    h = A.heisenberg()
    x_alpha = h.flow_vector((Fraction(3, 7),))
    f = E.ToralCharacter((1, 2))
    x0 = NM.GroupElement.make(h, [0.1, 0.2, 0.3])
    got = E.birkhoff_average(h, x_alpha, f, x0, 5, dt=1 / 256)
    want = E.toral_character_closed_form(h, x_alpha, f, x0, 5)
    assert abs(got - want) < 1e-5


def test_birkhoff_bounded_by_sup():
    h = A.heisenberg()
    f = E.PeriodizedBump((0.5,) * 3, (0.3,) * 3)
    sup = max(f.raw_mean, math.exp(-3) - f.raw_mean)
    x0 = NM.GroupElement.make(h, [0.3, 0.7, 0.1])
    ser = E.birkhoff_series(h, h.flow_vector(((math.sqrt(5) - 1) / 2,)), f, x0, [1, 16, 256])
    assert all(abs(v) <= sup + 1e-12 for v in ser.values())


def test_return_phase_is_polynomial_of_step_degree():
    alg = A.triangular(3)
    x_alpha = alg.flow_vector((Fraction(2, 5), Fraction(3, 7)))
    p = NM.SectionPoint(Fraction(1, 3), tuple(Fraction(k, 9) for k in range(5)))
    cs = E.return_phase_polynomial(alg, p, x_alpha, (0, 0, 0, 0, 1))
    assert len(cs) <= alg.step + 1
    for r in [7, -4, 30]:
        g = NM.return_map_unreduced(alg, p, x_alpha, r)
        assert E._poly_eval(cs, r) == g.coords[alg.ideal[-1]]


def test_discrepancy_of_grid_and_budget():
    g = (np.arange(64) + 0.5) / 64
    X, Y = np.meshgrid(g, g)
    rep = E.discrepancy(np.column_stack([X.ravel(), Y.ravel()]), 3)
    assert rep.value < 1e-15
    with pytest.raises(E.BudgetError):
        E.discrepancy(np.zeros((4, 6)), 8)


def test_theoretical_exponents():
    assert E.theoretical_exponent(A.heisenberg()) == Fraction(1, 3)
    assert E.theoretical_exponent(A.triangular(3), "step3_uniform") == Fraction(1, 12)
    with pytest.raises(A.AlgebraError):
        E.theoretical_exponent(A.heisenberg(), "step3_uniform")


def test_dyadic():
    assert E.dyadic(3, 5) == [8, 16, 32]
