import itertools

import numpy as np
import pytest

from gravfact import causal as C
from gravfact import geometry as G
from gravfact import oracles as O
from gravfact.errors import (
    EmptyCover,
    InvariantViolation,
    NonDiamondRegion,
    NotCauchy,
    NotTimeOrderable,
    OutOfChart,
    OverlappingRegions,
    UnsupportedBackground,
)

M2 = G.minkowski(2)
M4 = G.minkowski(4)
T10 = G.torus_slab(2, (-1.0, 2.0), 10.0)


# -- relations ---------------------------------------------------------------------

def test_relation_examples():
    r = C.relation(M2, (0, 0), (2, 1))
    assert r.chronological and r.causal
    r = C.relation(M2, (0, 0), (1, 1))
    assert not r.chronological and r.causal
    assert C.relation(T10, (0, 9.5), (1, 0.2)).chronological
    assert C.spatial_distance(T10, (0, 9.5), (1, 0.2)) == pytest.approx(0.7)


def test_relation_matches_brute_force_windings():
    rng = np.random.default_rng(0)
    st = G.torus_slab(4, (-1.0, 2.0), (3.0, 4.0, 5.0))
    p = np.column_stack([rng.uniform(-1, 2, 2000), rng.uniform(0, 3, 2000), rng.uniform(0, 4, 2000),
                         rng.uniform(0, 5, 2000)])
    q = np.column_stack([rng.uniform(-1, 2, 2000), rng.uniform(0, 3, 2000), rng.uniform(0, 4, 2000),
                         rng.uniform(0, 5, 2000)])
    got = C.relation(st, p, q).chronological
    want = O.brute_chronological(p, q, [3.0, 4.0, 5.0])
    assert np.array_equal(got, want)


def test_unsupported_background():
    with pytest.raises(UnsupportedBackground):
        C.relation(G.schwarzschild(), (0, 4, 1, 0), (1, 4, 1, 0))


def test_order_properties():
    rng = np.random.default_rng(1)
    for st in (M2, T10):
        pts = rng.uniform([-0.9, 0.0], [1.9, 9.9], size=(60, 2))
        R = C.relation(st, pts[:, None], pts[None, :]).chronological
        assert not R.diagonal().any()
        # transitivity on all triples
        comp = (R.astype(int) @ R.astype(int)) > 0
        assert not (comp & ~R).any()
        J = C.relation(st, pts[:, None], pts[None, :]).causal
        assert J.diagonal().all() and not (R & ~J).any()


# -- futures ---------------------------------------------------------------------------

@pytest.mark.parametrize("which", ["minkowski", "torus"])
def test_future_of_diamond_against_sampled_oracle(which):
    if which == "minkowski":
        st, periods = M2, None
        d = C.Diamond((-1.0, 0.0), (1.0, 0.0))
        lo, hi = (-1.5, -4.0), (4.0, 4.0)
    else:
        st, periods = T10, [10.0]
        d = C.Diamond((-0.8, 9.7), (-0.2, 9.7))
        lo, hi = (-0.95, 0.0), (1.95, 10.0)
    g = np.stack(np.meshgrid(np.linspace(lo[0], hi[0], 100), np.linspace(lo[1], hi[1], 100), indexing="ij"),
                 axis=-1).reshape(-1, 2)
    cone = C.causal_future_of_diamond(st, d)
    exact = cone.contains(g)
    # keep points not within 0.05 of the light cone of p, where finite sampling cannot decide
    margin = g[:, 0] - d.p[0] - C.spatial_distance(st, np.broadcast_to(d.p, g.shape), g)
    keep = np.abs(margin) > 0.05
    oracle = O.sampled_future_membership(d.p, d.q, g[keep], n=3000, periods=periods)
    assert keep.sum() > 9000
    assert np.array_equal(exact[keep], oracle)
    reg = C.region(st, d)
    assert np.array_equal(C.in_causal_future(reg, g), exact)


def test_future_contains_diamond():
    rng = np.random.default_rng(2)
    for _ in range(20):
        p = rng.uniform(-3, 3, 2)
        q = p + np.array([rng.uniform(0.5, 2.0), 0.0]) + np.array([0, rng.uniform(-0.4, 0.4)])
        reg = C.region(M2, C.Diamond(p, q))
        pts = reg.sample(200, rng)
        assert C.causal_future_of_diamond(M2, C.Diamond(p, q)).contains(pts).all()
        assert C.causal_past_of_diamond(M2, C.Diamond(p, q)).contains(pts).all()


def test_region_validation():
    with pytest.raises(InvariantViolation):
        C.region(M2, C.Diamond((0, 0), (1, 1)))
    with pytest.raises(OutOfChart):
        C.region(M2, C.Diamond((0, 9.5), (2, 9.5)))
    with pytest.raises(OutOfChart):
        C.region(T10, C.TimeSlab(-2.0, 0.0))


# -- convexity -----------------------------------------------------------------------------

def test_convexity_examples():
    assert C.causally_convex(C.region(M2, C.diamond_around((0, 0), 1.0)))
    assert C.causally_convex(C.region(T10, C.TimeSlab(0.0, 1.0)))
    spacelike = C.region(M2, C.diamond_around((0, -5), 1.0), C.diamond_around((0, 5), 1.0))
    assert C.causally_disjoint(C.region(M2, spacelike.primitives[0]), C.region(M2, spacelike.primitives[1]))
    assert C.causally_convex(spacelike)
    gapped = C.region(M2, C.diamond_around((0, 0), 0.5), C.diamond_around((3, 0), 0.5))
    dec = C.causally_convex(gapped)
    assert not dec and dec.method == "exact"
    mid = np.array([1.5, 0.0])
    assert not gapped.contains(mid[None])[0]
    assert C.in_causal_future(gapped, mid[None])[0] and C.in_causal_past(gapped, mid[None])[0]


def test_nested_and_touching_unions():
    big = C.diamond_around((0, 0), 2.0)
    small = C.diamond_around((0.3, 0.2), 0.5)
    assert C.causally_convex(C.region(M2, big, small))
    # side by side, the null rectangles cover the hull diamond
    a, b = C.diamond_around((0, -0.5), 1.0), C.diamond_around((0, 0.5), 1.0)
    assert C.causally_convex(C.region(M2, a, b))
    # staggered along one null direction, the hull has a missing corner
    a, b = C.Diamond((0, 0), (1.5, -0.5)), C.Diamond((0.75, -0.25), (2.25, -0.75))
    assert C.regions_overlap(C.region(M2, a), C.region(M2, b))
    dec = C.causally_convex(C.region(M2, a, b))
    assert not dec
    corner = np.array([[(2.5 + 0.2) / 2, (0.2 - 2.5) / 2]])  # null coordinates u=2.5, v=0.2
    assert C.primitive_contains(M2, C.Diamond(a.p, b.q), corner)[0]
    assert not C.region(M2, a, b).contains(corner)[0]


def test_convexity_sampled_in_four_dimensions():
    gapped = C.region(M4, C.diamond_around((0, 0, 0, 0), 0.5), C.diamond_around((3, 0, 0, 0), 0.5))
    dec = C.causally_convex(gapped, density=30)
    assert not dec and dec.method == "sampled"
    w = np.asarray(dec.witness)[None]
    assert not gapped.contains(w)[0]
    assert C.in_causal_future(gapped, w)[0] and C.in_causal_past(gapped, w)[0]
    spacelike = C.region(M4, C.diamond_around((0, 0, 0, 0), 0.5), C.diamond_around((0, 3, 0, 0), 0.5))
    assert C.causally_convex(spacelike, density=30)


def test_torus_union_sampled():
    gapped = C.region(T10, C.diamond_around((-0.5, 9.8), 0.3), C.diamond_around((1.5, 0.1), 0.3))
    dec = C.causally_convex(gapped, density=100)
    assert not dec
    w = np.asarray(dec.witness)[None]
    assert not gapped.contains(w)[0]


def test_boxes_are_not_convex():
    box = C.region(M2, C.CoordBox((0, 0), (1, 1)))
    dec = C.causally_convex(box)
    assert not dec
    w = np.asarray(dec.witness)[None]
    assert not box.contains(w)[0]
    assert C.in_causal_future(box, w)[0] and C.in_causal_past(box, w)[0]
    full = C.region(T10, C.CoordBox((0, 0), (1, 10)))
    assert C.causally_convex(full)


# -- disjointness ----------------------------------------------------------------------------

def test_disjoint_example_against_million_pairs():
    d1, d2 = C.diamond_around((0, -5), 1.0), C.diamond_around((0, 5), 1.0)
    assert C.causally_disjoint(C.region(M2, d1), C.region(M2, d2))
    assert O.sampled_disjoint((d1.p, d1.q), (d2.p, d2.q), n=1000)


def test_timelike_stack_not_disjoint():
    d1, d2 = C.diamond_around((0, 0), 0.5), C.diamond_around((2, 0), 0.5)
    dec = C.causally_disjoint(C.region(M2, d1), C.region(M2, d2))
    assert not dec and dec.witness == (d1, d2)


@pytest.mark.parametrize("which", ["minkowski", "torus"])
def test_disjointness_criterion_matches_oracle(which):
    rng = np.random.default_rng(3 if which == "minkowski" else 4)
    st, periods = (M2, None) if which == "minkowski" else (T10, [10.0])
    n_checked = 0
    while n_checked < 1000:
        ds = []
        for _ in range(2):
            c = np.array([rng.uniform(-0.2, 1.2), rng.uniform(0, 10) if periods else rng.uniform(-3, 3)])
            r = rng.uniform(0.1, 0.6)
            ds.append(C.diamond_around(c, r))
        m = max(C._meets_margin(st, ds[0], ds[1]), C._meets_margin(st, ds[1], ds[0]))
        if abs(m) < 0.02:
            continue  # the sampled oracle cannot resolve near-null configurations
        crit = bool(C.causally_disjoint(C.region(st, ds[0]), C.region(st, ds[1])))
        orc = O.sampled_disjoint((ds[0].p, ds[0].q), (ds[1].p, ds[1].q), n=300, rng=rng, periods=periods)
        assert crit == orc
        n_checked += 1


def test_disjointness_with_boxes():
    box = C.region(M2, C.CoordBox((0, 0), (1, 1)))
    far = C.region(M2, C.diamond_around((0.5, 4.0), 0.5))
    near = C.region(M2, C.diamond_around((2.5, 0.5), 0.5))
    assert C.causally_disjoint(box, far)
    assert not C.causally_disjoint(box, near)
    with pytest.raises(NonDiamondRegion):
        C.causally_disjoint(box, far, method="exact")


# -- overlap and time ordering ----------------------------------------------------------------

def test_overlap_socp_agrees_with_null_rectangles():
    rng = np.random.default_rng(5)
    for _ in range(40):
        a = C.diamond_around(rng.uniform(-1, 1, 2), rng.uniform(0.2, 0.8))
        b = C.diamond_around(rng.uniform(-1, 1, 2), rng.uniform(0.2, 0.8))
        exact = C.primitives_overlap(M2, a, b)
        socp = C._overlap_margin(M2, a, b, np.zeros(2)) > 1e-9
        assert exact == socp


def test_overlap_four_dimensions():
    a = C.diamond_around((0, 0, 0, 0), 1.0)
    assert C.primitives_overlap(M4, a, C.diamond_around((0, 1.5, 0, 0), 1.0))
    assert not C.primitives_overlap(M4, a, C.diamond_around((0, 2.5, 0, 0), 1.0))


def test_spacelike_tuple_is_identity():
    regs = [C.region(M2, C.diamond_around((0, x), 0.5)) for x in (-4, 0, 4)]
    perm = C.time_order_permutation(regs)
    assert perm == [0, 1, 2]
    assert all(C.check_time_order(regs, list(p)) for p in itertools.permutations(range(3)))


def test_stacked_tuple_future_first():
    bottom, top, middle = (C.region(M2, C.diamond_around((t, 0), 0.5)) for t in (0, 4, 2))
    regs = [bottom, top, middle]
    perm = C.time_order_permutation(regs)
    assert perm == [1, 2, 0]
    valid = [p for p in itertools.permutations(range(3)) if C.check_time_order(regs, list(p))]
    assert valid == [(1, 2, 0)]


def test_overlapping_planar_pair_is_rejected():
    regs = [C.region(M2, C.diamond_around((0, 0), 0.5)), C.region(M2, C.diamond_around((0.5, 0.4), 0.5))]
    with pytest.raises(OverlappingRegions):
        C.time_order_permutation(regs)


def test_cyclic_pair_in_four_dimensions():
    # disjoint diamonds whose futures meet each other
    d1 = C.Diamond((0, 1, 0, 0), (1.8, 0, 1, 0))
    d2 = C.Diamond((0, -1, 0, 0), (1.8, 0, -1, 0))
    regs = [C.region(M4, d1), C.region(M4, d2)]
    assert not C.regions_overlap(*regs)
    assert C.future_meets(regs[0], regs[1]) and C.future_meets(regs[1], regs[0])
    with pytest.raises(NotTimeOrderable):
        C.time_order_permutation(regs)
    assert not any(C.check_time_order(regs, list(p)) for p in itertools.permutations(range(2)))


def test_disjoint_planar_diamonds_always_orderable():
    rng = np.random.default_rng(6)
    found = 0
    while found < 30:
        ds = [C.diamond_around(rng.uniform(-2, 2, 2), rng.uniform(0.2, 0.7)) for _ in range(3)]
        if any(C.primitives_overlap(M2, a, b) for a, b in itertools.combinations(ds, 2)):
            continue
        regs = [C.region(M2, d) for d in ds]
        perm = C.time_order_permutation(regs)
        assert C.check_time_order(regs, perm)
        found += 1


# -- Cauchy morphisms ---------------------------------------------------------------------------

SIGMA = G.torus_slab(2, (-1.0, 2.0), 2 * np.pi)


def test_slab_inclusion_is_cauchy():
    src = G.torus_slab(2, (0.0, 1.0), 2 * np.pi)
    f = C.loc_morphism(src, SIGMA)
    assert C.is_cauchy_morphism(f)
    assert f.checks["metric_residual"] < 1e-10


def test_translated_slab_is_cauchy():
    from fractions import Fraction
    src = G.torus_slab(2, (0.0, 1.0), 2 * np.pi)
    f = C.loc_morphism(src, SIGMA, shift=(Fraction(1, 2), 0))
    assert f.image.primitives[0] == C.TimeSlab(0.5, 1.5)
    assert C.is_cauchy_morphism(f)
    with pytest.raises(OutOfChart):
        C.loc_morphism(src, SIGMA, shift=(Fraction(3, 2), 0))


def test_proper_subregion_is_not_cauchy():
    reg = C.region(SIGMA, C.diamond_around((0.5, 3.0), 0.5))
    f = C.loc_morphism(reg, SIGMA)
    assert not C.is_cauchy_morphism(f)
    with pytest.raises(NotCauchy):
        C.require_cauchy(f)


def test_box_images_are_rejected_as_not_convex():
    reg = C.region(SIGMA, C.CoordBox((0.0, 1.0), (1.0, 2.0)))
    with pytest.raises(InvariantViolation):
        C.loc_morphism(reg, SIGMA)


def test_full_width_box_image_is_cauchy():
    reg = C.region(SIGMA, C.CoordBox((0.0, 0.0), (1.0, 2 * np.pi)))
    assert C.is_cauchy_morphism(C.loc_morphism(reg, SIGMA))


def test_cauchy_needs_compact_slices():
    reg = C.region(M2, C.diamond_around((0, 0), 1.0))
    with pytest.raises(UnsupportedBackground):
        C.is_cauchy_morphism(C.loc_morphism(reg, M2))


# -- Alexandrov refinement ---------------------------------------------------------------------

def test_refinement_of_unit_box():
    boxes = [C.CoordBox((0, 0), (1, 1))]
    ds = C.alexandrov_refinement(M2, boxes)
    rep = C.check_refinement(M2, boxes, ds, density=200)
    assert rep["contained"] and rep["covered_fraction"] == 1.0
    assert all(C.causally_convex(C.region(M2, d)) for d in ds[:5])


def test_refinement_of_diamond_bounding_box():
    d = C.diamond_around((0.5, 0.5), 0.5)
    lo, hi = C.diamond_bbox(d)
    ds = C.alexandrov_refinement(M2, [C.CoordBox(lo, hi)], density=40)
    assert ds[0] == d
    # corners of the bounding box lie outside d, so more diamonds are needed for full grid coverage
    assert len(ds) > 1


def test_refinement_of_overlapping_boxes():
    boxes = [C.CoordBox((0, 0), (1, 1)), C.CoordBox((0.5, 0.5), (1.5, 1.5))]
    ds = C.alexandrov_refinement(M2, boxes, density=60)
    rep = C.check_refinement(M2, boxes, ds, density=60)
    assert rep["contained"] and rep["covered_fraction"] == 1.0
    overlap = C.coverage_grid(M2, [C.CoordBox((0.5, 0.5), (1, 1))], 50)
    hit = np.zeros(len(overlap), dtype=bool)
    for d in ds:
        hit |= C.primitive_contains(M2, d, overlap)
    assert hit.all()


def test_refinement_needs_boxes():
    with pytest.raises(EmptyCover):
        C.alexandrov_refinement(M2, [])
