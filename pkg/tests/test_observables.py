from fractions import Fraction

import numpy as np
import pytest

from gravfact import causal as CA
from gravfact import complex as C
from gravfact import geometry as G
from gravfact import green as GR
from gravfact import observables as O
from gravfact.errors import NotCauchy, NotTimeOrderable, OverlappingImages, SupportEscapesImage

S4 = G.torus_slab(4, (-1.0, 4.0))
L = 2 * np.pi


@pytest.fixture(scope="module")
def setup():
    return O.slab_setup()


def diamond(t, x, r):
    return CA.region(S4, CA.diamond_around([t, x, L / 2, L / 2], r))


def lin(rng, reg, deg, label):
    s = O.inscribed_box_section(S4, rng, reg.primitives[0], (deg,))
    return O.linear(S4, s, label, region=reg)


# -- pairings ------------------------------------------------------------------------------

def test_shifted_pairing_is_the_plain_pairing(setup):
    rng = np.random.default_rng(0)
    a = O.diamond_section(S4, rng, 1.0, 3.0, 1.2, (0,))
    b = O.diamond_section(S4, rng, 1.2, 3.3, 1.2, (1,))
    assert O.tau("shiftedMinus1", S4, a, b) == pytest.approx(C.pairing(S4, a, b, nodes=48), rel=1e-14)
    with pytest.raises(TypeError):
        O.tau("dirac", S4, a, b)
    with pytest.raises(ValueError):
        O.tau("bogus", setup.op, a, b)


def test_propagator_pairing_symmetries(setup):
    rng = np.random.default_rng(1)
    a = O.diamond_section(S4, rng, 1.5, 3.0, 1.0, (1,))
    b = O.diamond_section(S4, rng, 1.7, 3.3, 1.0, (1,))
    for kind, sign in (("unshifted0", -1.0), ("dirac", 1.0)):
        x, y = O.tau_detail(kind, setup.op, a, b), O.tau_detail(kind, setup.op, b, a)
        assert abs(x.value) > 1e-4 * x.scale
        assert abs(x.value - sign * y.value) < 1e-8 * max(x.scale, y.scale)


def test_dirac_pairing_bounds_the_shifted_pairing(setup):
    rng = np.random.default_rng(2)
    a = O.diamond_section(S4, rng, 1.0, 3.0, 1.2, (0,))
    b = O.diamond_section(S4, rng, 1.3, 3.4, 1.2, (1,))
    lhs, rhs, scale = O.d_tau_dirac(setup.op, a, b)
    assert abs(rhs) > 1e-5 * scale
    assert abs(lhs - rhs) < 1e-7 * scale


def test_einstein_causality_small_run(setup):
    rows = O.suite_einstein_causality(trials=2, seed=3, setup=setup)
    assert len(rows) == 4
    assert all(r.passed for r in rows)


# -- words -------------------------------------------------------------------------------------

def test_odd_factors_anticommute_and_square_to_zero():
    rng = np.random.default_rng(4)
    a, b = lin(rng, diamond(1.5, 1.0, 0.8), 0, "a"), lin(rng, diamond(1.5, 3.0, 0.8), 2, "b")
    e = lin(rng, diamond(1.5, 5.0, 0.8), 1, "e")
    assert (a * b).same_words((b * a).scaled(-1.0))
    assert (a * e).same_words(e * a)
    assert (a * a).words == ()
    assert len((e * e).words) == 1


def test_degree_bound_and_pruning():
    rng = np.random.default_rng(5)
    a = lin(rng, diamond(1.5, 1.0, 0.8), 1, "a")
    with pytest.raises(ValueError):
        a * a * a * a
    assert (a + a.scaled(-1.0)).words == ()


def test_support_must_lie_in_declaring_region():
    rng = np.random.default_rng(6)
    s = O.inscribed_box_section(S4, rng, diamond(1.5, 1.0, 0.8).primitives[0], (1,))
    with pytest.raises(SupportEscapesImage):
        O.linear(S4, s, "s", region=diamond(1.5, 4.0, 0.8))


def test_q_squared_on_observables():
    assert all(r.passed for r in O.q_squared_rows(seed=1))


# -- pushforward and products ---------------------------------------------------------------------

def test_identity_pushforward_is_the_same_object():
    rng = np.random.default_rng(7)
    reg = diamond(1.5, 3.0, 0.8)
    o = lin(rng, reg, 1, "a")
    assert O.pushforward(O.identity(reg), o) is o


def test_pushforward_composes_exactly():
    B, D, d, shift = O.nested_family(S4)
    rng = np.random.default_rng(8)
    o = lin(rng, d, 0, "x")
    e1, e2 = O.embedding(d, D, shift), O.embedding(D, B)
    a = O.pushforward(e2, O.pushforward(e1, o))
    b = O.pushforward(O.compose(e1, e2), o)
    assert a.same_words(b)
    (c, (fac,)), = a.words
    assert fac.shift == tuple(shift)


def test_embedding_must_land_inside_target():
    B, D, d, _ = O.nested_family(S4)
    with pytest.raises(SupportEscapesImage):
        O.embedding(B, d)


def test_pushed_section_pairs_like_the_pulled_configuration():
    rng = np.random.default_rng(9)
    M = G.torus_slab(4, (-1.0, 2.0))
    f = CA.loc_morphism(M, S4, [Fraction(3, 2), Fraction(5, 4), 0, 0])
    psi = C.random_section("gr", M, rng, degrees=(1,), center=[0.5, 5.5, 1, 1], halfwidths=[0.4, 1.0, 1, 1],
                           degree=1, power=20, active=O.X1_ONLY)
    u = C.random_section("gr", S4, rng, degrees=(0,), center=[1.0, 1.0, 1, 1], degree=2, active=O.X1_ONLY)
    a = C.pairing_detail(S4, O.pushforward(f, psi), u, nodes=48)
    b = C.pairing_detail(M, psi, O.pull_section(f, u), nodes=48)
    assert abs(a.value) > 1e-3 * a.scale
    assert abs(a.value - b.value) < 1e-9 * a.scale


def test_naturality_rows():
    assert all(r.passed for r in O.naturality_rows(morphisms=2, seed=1))


def test_factorization_product_cases():
    rng = np.random.default_rng(10)
    r1, r2 = diamond(1.5, 1.5, 0.8), diamond(1.5, 4.5, 0.8)
    o1, o2 = lin(rng, r1, 1, "p"), lin(rng, r2, -1, "q")
    f1, f2 = O.embedding(r1, S4), O.embedding(r2, S4)
    assert O.factorization_product([f1], [o1]).same_words(O.pushforward(f1, o1))
    two = O.factorization_product([f1, f2], [o1, o2])
    (c, fs), = two.words
    assert c == 1.0 and {x.label for x in fs} == {"p", "q"}
    assert O.unit(S4).words == ((1.0, ()),)
    with pytest.raises(OverlappingImages):
        O.factorization_product([f1, O.embedding(diamond(1.6, 1.7, 0.8), S4)], [o1, o2])


def test_time_ordered_products():
    rng = np.random.default_rng(11)
    a, b = diamond(1.5, 1.5, 0.8), diamond(1.5, 4.5, 0.8)
    oa, ob = lin(rng, a, 0, "a"), lin(rng, b, 1, "b")
    fa, fb = O.embedding(a, S4), O.embedding(b, S4)
    assert O.time_ordered_product([fa, fb], [oa, ob]).same_words(O.time_ordered_product([fb, fa], [ob, oa]))
    early, late = diamond(0.2, 3.0, 0.7), diamond(2.5, 3.0, 0.7)
    oe, ol = lin(rng, early, 1, "e"), lin(rng, late, 1, "l")
    fe, fl = O.embedding(early, S4), O.embedding(late, S4)
    good = O.time_ordered_product([fl, fe], [ol, oe])
    assert good.same_words(O.factorization_product([fe, fl], [oe, ol]))
    with pytest.raises(NotTimeOrderable):
        O.time_ordered_product([fe, fl], [oe, ol])


def test_prefactorization_suite():
    rows = O.suite_prefactorization(seed=2)
    assert len(rows) == 2 + 6 + 3
    assert all(r.passed for r in rows)


# -- Cauchy constancy -----------------------------------------------------------------------------

def test_cauchy_constancy_one_trial():
    rows = O.suite_cauchy_constancy(trials=1, seed=4)
    assert len(rows) == 3 and all(r.passed for r in rows)


def test_non_cauchy_morphism_is_refused():
    S2 = G.torus_slab(2, (-1.0, 4.0))
    f = CA.loc_morphism(CA.region(S2, CA.Diamond((0.0, 3.0), (1.0, 3.0))), S2)
    with pytest.raises(NotCauchy):
        O.suite_cauchy_constancy(f, trials=1)
