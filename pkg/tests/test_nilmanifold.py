from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nilflow_lab import algebra as A
from nilflow_lab import nilmanifold as NM

GROUPS = ["heisenberg", "triangular:3", "free:2:3", "filiform:4"]
INTEGRAL = ["heisenberg", "triangular:3", "triangular:4", "f23-lattice"]

coord = st.fractions(min_value=-4, max_value=4, max_denominator=10)
word = st.integers(min_value=-3, max_value=3)


def elements(alg, elt=coord):
    return st.lists(elt, min_size=alg.dim, max_size=alg.dim).map(
        lambda c: NM.GroupElement.make(alg, c, "exact"))


def test_heisenberg_group_law_by_hand():
    # (a, b, c)(a', b', c') in second-kind coordinates exp(aX1)exp(bX2)exp(cZ)
    # moves exp(bX2) past exp(a'X1), picking up -b a' in Z
    h = A.heisenberg()
    g = NM.GroupElement.make(h, [1, 2, 3])
    k = NM.GroupElement.make(h, [5, 7, 11])
    assert (g * k).coords == (6, 9, 3 + 11 - 2 * 5)


def test_identity_and_inverse():
    alg = A.triangular(3)
    g = NM.GroupElement.make(alg, [Fraction(i, 3) for i in range(alg.dim)])
    e = NM.identity(alg)
    assert g * e == g and e * g == g
    assert g * NM.inverse(g) == e


def test_exp_roundtrip_first_kind():
    alg = A.triangular(4)
    u = A.LieVector.exact([Fraction(i - 3, 4) for i in range(alg.dim)])
    assert NM.exp_element(alg, u).first_kind() == u


def test_exp_matches_bch():
    alg = A.triangular(3)
    x = A.LieVector.exact([Fraction(i, 5) for i in range(alg.dim)])
    y = A.LieVector.exact([Fraction(2 - i, 3) for i in range(alg.dim)])
    lhs = NM.exp_element(alg, x) * NM.exp_element(alg, y)
    assert lhs == NM.exp_element(alg, A.bch(alg, x, y))


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_multiply_associative_exact(data):
    alg = A.builtin(data.draw(st.sampled_from(GROUPS)))
    a, b, c = (data.draw(elements(alg)) for _ in range(3))
    assert (a * b) * c == a * (b * c)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_multiply_associative_float(data):
    alg = A.builtin(data.draw(st.sampled_from(GROUPS)))
    a, b, c = (data.draw(elements(alg)).to_float() for _ in range(3))
    assert np.abs((a * b * c).array() - (a * (b * c)).array()).max() < 1e-12


@settings(max_examples=80, deadline=None)
@given(st.data())
def test_reduce_idempotent_and_equivariant(data):
    alg = A.builtin(data.draw(st.sampled_from(INTEGRAL)))
    g = data.draw(elements(alg))
    gamma = NM.word_element(alg, data.draw(st.lists(word, min_size=alg.dim, max_size=alg.dim)))
    p, w = NM.reduce_mod_lattice(g)
    assert all(0 <= c < 1 for c in p.coords)
    assert NM.reduce_mod_lattice(p)[0] == p
    assert NM.reduce_mod_lattice(gamma * g)[0] == p
    # g = word * point
    assert NM.word_element(alg, w.coords if hasattr(w, "coords") else w) * p == g


def test_distance_zero_on_lattice_orbit():
    alg = A.triangular(3)
    g = NM.GroupElement.make(alg, [Fraction(1, 3)] * alg.dim)
    gamma = NM.word_element(alg, [1, -2, 0, 3, 1, -1])
    assert NM.manifold_distance(g, gamma * g) == 0
    assert NM.manifold_distance(g, g * NM.exp_element(alg, alg.unit(5) * Fraction(1, 4))) == 0.25


@pytest.mark.parametrize("name", ["filiform:4", "free:2:3"])
def test_non_integral_lattice_rejected(name):
    with pytest.raises(NM.LatticeError):
        NM.lattice(A.builtin(name))


def test_torus_projection_is_linear_flow():
    alg = A.triangular(3)
    alpha = (Fraction(2, 7), Fraction(3, 11))
    x_alpha = alg.flow_vector(alpha)
    x = NM.GroupElement.make(alg, [Fraction(1, 5)] * alg.dim).to_float()
    freq = [float(v) for v in NM.flow_frequency(x_alpha, alg)]
    base = np.array(NM.torus_projection(x))
    for t in [0.3, 1.7, 12.25]:
        got = np.array(NM.torus_projection(NM.flow_step(x, x_alpha, t)))
        want = (base + t * np.array(freq)) % 1.0
        d = np.abs(got - want)
        assert np.minimum(d, 1 - d).max() < 1e-12


def test_flow_flavour_guard():
    alg = A.heisenberg()
    x = NM.identity(alg)
    with pytest.raises(A.FlavorError):
        NM.flow_step(x, alg.flow_vector((Fraction(1, 3),)), 0.5)


@pytest.mark.parametrize("name", ["heisenberg", "triangular:3"])
def test_return_map_matches_iteration_small(name):
    alg = A.builtin(name)
    rng = np.random.default_rng(3)
    x_alpha = alg.flow_vector(tuple(Fraction(int(v), 1000) for v in rng.integers(1, 1000, len(alg.generators) - 1)))
    p = NM.SectionPoint(Fraction(1, 7), tuple(Fraction(int(v), 97) for v in rng.integers(0, 97, len(alg.ideal))))
    assert NM.return_map_error(alg, p, x_alpha, list(range(-50, 51))) <= 1e-9


def test_section_roundtrip():
    alg = A.triangular(3)
    p = NM.SectionPoint(Fraction(2, 9), tuple(Fraction(k, 11) for k in range(len(alg.ideal))))
    assert NM.section_coords(NM.section_embed(alg, p)) == p


def test_return_map_exact_flavour_is_reduced():
    alg = A.heisenberg()
    x_alpha = alg.flow_vector((Fraction(3, 8),))
    p = NM.SectionPoint(Fraction(0), (Fraction(1, 4), Fraction(1, 2)))
    q = NM.return_map(alg, p, x_alpha, 5)
    assert all(0 <= v < 1 for v in q.s)


def test_orbit_dump_roundtrip(tmp_path):
    alg = A.heisenberg()
    pts = np.arange(12, dtype=float).reshape(3, 4) / 17
    times = np.arange(4, dtype=float)
    path = NM.dump_orbit(tmp_path / "orbit.bin", times, pts, manifest={"seed": 0})
    rec = NM.load_orbit(path, alg.dim)
    assert np.array_equal(rec[:, 0], times) and np.array_equal(rec[:, 1:].T, pts)
    assert (tmp_path / "orbit.bin.manifest.json").exists()
    csv = NM.dump_orbit(tmp_path / "orbit.csv", times, pts, fmt="csv")
    back = np.loadtxt(csv, delimiter=",", skiprows=1)
    assert np.array_equal(back[:, 1:].T, pts)


def test_lattice_gap_heisenberg():
    gap = NM.lattice_gap(A.heisenberg(), radius=1)
    assert gap.c_gamma == 1.0


def test_iteration_error_does_not_grow_cubically():
    # rational alpha whose float rounding used to leak into Z like r^3
    alg = A.triangular(3)
    x_alpha = alg.flow_vector((Fraction(72080, 541147), Fraction(948649, 1024923)))
    p = NM.SectionPoint(Fraction(311, 1000), (Fraction(869, 1000), Fraction(423, 1000), Fraction(273, 1000),
                                              Fraction(827, 1000), Fraction(32, 125)))
    assert NM.return_map_error(alg, p, x_alpha, [-1000, 1000]) < 1e-10


def test_iterate_return_agrees_with_error_path():
    alg = A.heisenberg()
    x_alpha = alg.flow_vector((Fraction(5, 13),))
    p = NM.SectionPoint(Fraction(1, 4), (Fraction(1, 3), Fraction(2, 3)))
    closed = NM.section_embed(alg, NM.return_map(alg, p, x_alpha, -37).to_float(), False)
    assert NM.manifold_distance(closed, NM.iterate_return(alg, p, x_alpha, -37)) < 1e-13
