from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from nilflow_lab import algebra as A

BUILTINS = ["heisenberg", "filiform:4", "triangular:3", "triangular:4", "triangular:5",
            "free:2:3", "free:3:3", "free:2:4"]

small_frac = st.fractions(min_value=-5, max_value=5, max_denominator=12)


def vectors(dim):
    return st.lists(small_frac, min_size=dim, max_size=dim).map(A.LieVector.exact)


@pytest.mark.parametrize("name", BUILTINS)
def test_jacobi_clean_on_builtins(name):
    assert A.check_jacobi(A.builtin(name)) == []


def test_heisenberg_tables():
    h = A.heisenberg()
    assert list(h.labels) == ["X1", "X2", "Z"]
    z = h.bracket(h.unit(0), h.unit(1))
    assert z.coeffs == (0, 0, 1)
    assert h.step == 2 and list(h.ideal) == [1, 2]


def test_corrupted_table_raises_jacobi_error():
    text = A.algebra_to_text(A.triangular(3))
    # [X1, X2] = 2 Y1 breaks the (X1, X2, X3) Jacobi identity
    bad = text.replace("\n0 1 3 1\n", "\n0 1 3 2\n")
    assert bad != text
    with pytest.raises(A.JacobiError):
        A.parse_algebra_text(bad)


def test_named_relation_free33():
    nb = A.free3_named_basis(A.builtin("free:3:3"))
    assert (nb["Z2"] - nb["Z6"] + nb["Z7"]).is_zero()
    assert not (nb["Z2"] - nb["Z6"]).is_zero()


def test_hall_basis_dimensions():
    # Witt's formula: free:2:3 has 2+1+2, free:3:3 has 3+3+8
    assert list(A.builtin("free:2:3").layer_counts) == [2, 1, 2]
    assert list(A.builtin("free:3:3").layer_counts) == [3, 3, 8]


@pytest.mark.parametrize("name", ["triangular:3", "triangular:4"])
def test_bch_matches_matrix_oracle(name):
    import numpy as np
    alg = A.builtin(name)
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = A.LieVector.exact([Fraction(int(a), int(b)) for a, b in zip(rng.integers(-9, 10, alg.dim), rng.integers(1, 9, alg.dim))])
        y = A.LieVector.exact([Fraction(int(a), int(b)) for a, b in zip(rng.integers(-9, 10, alg.dim), rng.integers(1, 9, alg.dim))])
        assert A.bch(alg, x, y, "series") == A.bch(alg, x, y, "matrix")


def test_bch_float_flavour_close_to_exact():
    alg = A.builtin("triangular:3")
    x = A.LieVector.exact([Fraction(i + 1, 7) for i in range(alg.dim)])
    y = A.LieVector.exact([Fraction(3 - i, 5) for i in range(alg.dim)])
    ex = A.bch(alg, x, y, "series").to_float().array()
    fl = A.bch(alg, x.to_float(), y.to_float(), "series").array()
    assert abs(ex - fl).max() < 1e-14


def test_mixed_flavours_rejected():
    alg = A.heisenberg()
    with pytest.raises(A.FlavorError):
        alg.unit(0) + alg.unit(1).to_float()


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_bch_group_axioms(data):
    alg = A.builtin(data.draw(st.sampled_from(["heisenberg", "triangular:3", "free:2:4", "filiform:4"])))
    x = data.draw(vectors(alg.dim))
    y = data.draw(vectors(alg.dim))
    assert A.bch(alg, x, -x, "series").is_zero()
    assert A.bch(alg, A.bch(alg, x, y, "series"), -y, "series") == x


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_bracket_antisymmetric_bilinear(data):
    alg = A.builtin(data.draw(st.sampled_from(BUILTINS)))
    x, y, z = (data.draw(vectors(alg.dim)) for _ in range(3))
    c = data.draw(small_frac)
    assert alg.bracket(x, y) == -alg.bracket(y, x)
    assert alg.bracket(x * c + z, y) == alg.bracket(x, y) * c + alg.bracket(z, y)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_degree_bounded_by_layer(data):
    alg = A.builtin(data.draw(st.sampled_from(BUILTINS)))
    x = data.draw(vectors(alg.dim))
    i = data.draw(st.sampled_from(list(alg.ideal)))
    assert A.degree(alg, x, alg.unit(i)) <= alg.step - alg.layers[i]


@pytest.mark.parametrize("name", ["heisenberg", "triangular:3", "triangular:4", "filiform:4"])
def test_degree_generic_equality(name):
    alg = A.builtin(name)
    x = alg.flow_vector(A.generic_alpha(alg))
    for i in alg.ideal:
        assert A.degree(alg, x, alg.unit(i)) == alg.step - alg.layers[i]


@pytest.mark.parametrize("k", [2, 3, 4, 5, 6])
def test_triangular_S_closed_form(k):
    # layer m has k+1-m entries of degree k-m; the flow generator drops out
    alg = A.triangular(k)
    by_hand = sum((k + 1 - m) * (k - m) for m in range(1, k + 1)) - (k - 1)
    assert A.layer_count_S(alg) == by_hand


@pytest.mark.parametrize("k", [2, 3, 4, 5])
def test_homogeneous_lambda_equals_delta(k):
    alg = A.triangular(k)
    sd = A.scaling_data(alg, alg.flow_vector(A.generic_alpha(alg)))
    assert sd.lam == sd.delta == 1 / sd.S


def test_triangular3_homogeneous_value():
    alg = A.triangular(3)
    sd = A.scaling_data(alg, alg.flow_vector(A.generic_alpha(alg)))
    assert sd.S == 6
    assert sd.lam == sd.delta == Fraction(1, 6)


@pytest.mark.parametrize("name", ["heisenberg", "triangular:3", "triangular:4"])
def test_transversality_true_generic(name):
    alg = A.builtin(name)
    rep = A.check_transversality(alg, alg.flow_vector(A.generic_alpha(alg)))
    assert rep.verdict


@settings(max_examples=20, deadline=None)
@given(st.fractions(min_value=-7, max_value=7, max_denominator=9).filter(lambda c: c != 0))
def test_transversality_scale_invariant(c):
    alg = A.triangular(3)
    x = alg.flow_vector(A.generic_alpha(alg))
    assert A.check_transversality(alg, x).verdict == A.check_transversality(alg, x * c).verdict


def test_transversality_rejects_ideal_vector():
    alg = A.heisenberg()
    with pytest.raises(A.AlgebraError):
        A.check_transversality(alg, alg.unit(1))


def test_generalized_predicates_both_exposed():
    alg = A.builtin("free:3:3")
    x = alg.flow_vector(A.generic_alpha(alg))
    lam = A.generic_functional(alg)
    lit = A.check_generalized_transversality(alg, x, lam, "literal")
    pol = A.check_generalized_transversality(alg, x, lam, "polynomial")
    # the polynomial predicate imposes more conditions
    assert pol.centralizer_dim <= lit.centralizer_dim


def test_text_roundtrip():
    for name in ["heisenberg", "triangular:3", "free:2:3"]:
        alg = A.builtin(name)
        back = A.parse_algebra_text(A.algebra_to_text(alg))
        x = alg.flow_vector(A.generic_alpha(alg))
        for i in range(alg.dim):
            assert back.bracket(x, back.unit(i)) == alg.bracket(x, alg.unit(i))


def test_unknown_builtin():
    with pytest.raises(A.AlgebraError):
        A.builtin("nonsense:9")
