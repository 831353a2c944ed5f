import numpy as np
import pytest
from scipy.integrate import quad

from gravfact import complex as C
from gravfact import fields as F
from gravfact import geometry as G
from gravfact import green as GR
from gravfact.errors import (CutoffOutsideImage, ModeCutoffTooLow, SupportTooCloseToBoundary,
                             UnsupportedBackground)

S2 = G.torus_slab(2, (-1.0, 4.0))
S4 = G.torus_slab(4, (-1.0, 4.0))
RET = GR.GreenOperator(S2, "retarded", (64,))
ADV = RET.opposite()
X1_ONLY = (True, True, False, False)


@pytest.fixture(scope="module")
def bump2():
    return GR.bump_source(S2, [1.0, 3.0], [0.5, 0.8], power=20)


def random_points(rng, n, t=(0.4, 3.5), x=(0.0, 2 * np.pi)):
    return np.column_stack([rng.uniform(*t, n), rng.uniform(*x, n)])


# -- single modes ----------------------------------------------------------------------

def test_single_mode_matches_scalar_duhamel():
    f, sup = GR.time_bump_mode(S2, 1.0, 0.5, [3.0], power=6)
    g = RET.apply_field(f, sup)
    pts = np.array([[0.8, 0.3], [1.2, 2.0], [2.5, 4.0], [3.9, 5.5]])

    def exact(t, x):
        b = lambda s: (1 - ((s - 1.0) / 0.5) ** 2) ** 6
        hi = min(t, 1.5)
        if hi <= 0.5:
            return 0.0
        v, _ = quad(lambda s: np.sin(3 * (t - s)) / 3 * b(s), 0.5, hi, epsabs=1e-14, epsrel=1e-12, limit=200)
        return np.cos(3 * x) * v

    ref = np.array([exact(*p) for p in pts])
    assert np.allclose(g.values(pts), ref, atol=1e-12)


def test_single_mode_small_cutoff_is_enough():
    f, sup = GR.time_bump_mode(S2, 1.0, 0.5, [3.0], power=6)
    g = GR.GreenOperator(S2, "retarded", (6,)).apply_field(f, sup)
    pts = np.array([[1.3, 0.7], [2.0, 1.0]])
    assert np.allclose(g.values(pts), RET.apply_field(f, sup).values(pts), atol=1e-13)


def test_wave_inverts_both_directions(bump2):
    f, sup = bump2
    pts = random_points(np.random.default_rng(0), 30, t=(0.5, 1.5), x=(2.2, 3.8))
    fmax = np.abs(f.values(pts)).max()
    for op in (RET, ADV):
        g = op.apply_field(f, sup)
        assert np.abs(GR.wave(S2, g).values(pts) - f.values(pts)).max() < 1e-8 * fmax


def test_retarded_vanishes_in_the_past():
    f, sup = GR.bump_source(S2, [0.1, 3.0], [0.1, 1.0], power=20)
    g = RET.apply_field(f, sup)
    pts = np.column_stack([np.full(7, -0.5), np.linspace(0, 6, 7)])
    assert np.abs(g.values(pts)).max() < 1e-12
    gm = ADV.apply_field(f, sup)
    late = np.column_stack([np.full(7, 1.0), np.linspace(0, 6, 7)])
    assert np.abs(gm.values(late)).max() < 1e-12


def test_support_inside_causal_future(bump2):
    f, sup = bump2
    g = RET.apply_field(f, sup)
    t, x = np.meshgrid(np.linspace(-0.9, 3.9, 60), np.linspace(0, 2 * np.pi, 60, endpoint=False), indexing="ij")
    P = np.column_stack([t.ravel(), x.ravel()])
    vals = g.values(P)
    gap = np.min([np.clip(np.maximum(2.2 - (P[:, 1] + s), (P[:, 1] + s) - 3.8), 0, None)
                  for s in (-2 * np.pi, 0, 2 * np.pi)], axis=0)
    outside = P[:, 0] - 0.5 < gap
    assert outside.sum() > 100
    assert np.abs(vals[outside]).max() < 1e-10 * 1.0
    assert np.abs(vals[~outside]).max() > 1e-3


def test_two_quadrature_schemes_agree(bump2):
    f, sup = bump2
    pts = random_points(np.random.default_rng(1), 4, t=(1.0, 3.0), x=(2.0, 4.0))
    for op in (RET, ADV):
        a = op.apply_field(f, sup).values(pts)
        b = GR.reference_values(op, f, sup, pts)
        assert np.abs(a - b).max() < 1e-9


def test_time_jets_are_consistent(bump2):
    f, sup = bump2
    g = RET.apply_field(f, sup)
    p = np.array([[1.7, 3.1]])
    d = g.jets(p, 2).partial_value((1, 0))[0]
    h = 1e-5
    fd = (g.values(p + [h, 0]) - g.values(p - [h, 0]))[0] / (2 * h)
    assert d == pytest.approx(fd, abs=1e-8)


# -- propagators ---------------------------------------------------------------------------

def test_causal_propagator_is_a_solution(bump2):
    f, sup = bump2
    Gf = GR.propagate_field(RET, f, sup, "G")
    pts = random_points(np.random.default_rng(2), 20)
    assert np.abs(GR.wave(S2, Gf).values(pts)).max() < 1e-8


def test_propagator_pairing_symmetries():
    f1, s1 = GR.bump_source(S2, [1.0, 3.0], [0.5, 0.8], power=20)
    f2, s2 = GR.bump_source(S2, [2.0, 2.0], [0.4, 0.9], power=20, spatial_modes=[(1.0, [2.0], 0.3), (0.5, [0.0], 0)])
    for kind, sign in (("G", -1.0), ("G_D", 1.0)):
        a, sa = GR.field_pairing(S2, GR.propagate_field(RET, f1, s1, kind), f2, s2)
        b, sb = GR.field_pairing(S2, f1, GR.propagate_field(RET, f2, s2, kind), s1)
        assert abs(a) > 1e-6
        assert abs(a - sign * b) < 1e-8 * max(sa, sb)


# -- homotopies on the 4D slab -----------------------------------------------------------------

@pytest.mark.parametrize("degree", [-1, 0, 1, 2])
def test_green_homotopy_trivialises_inclusion(degree):
    rng = np.random.default_rng(10 + degree)
    op = GR.GreenOperator(S4, "retarded", (64, 0, 0))
    s = C.random_section("gr", S4, rng, degrees=(degree,), center=[1.0, 3.0, 1, 1], halfwidths=[0.5, 1.0, 1, 1],
                         degree=1, power=20, active=X1_ONLY)
    pts = np.column_stack([rng.uniform(0.6, 1.4, 4), rng.uniform(2.2, 3.8, 4), rng.uniform(0, 6, 4),
                           rng.uniform(0, 6, 4)])
    kinds = ("retarded", "advanced") if degree != 0 else ("retarded",)
    for kind in kinds:
        assert GR.homotopy_residual(op, s, pts, kind) < 1e-7


def test_single_mode_homotopy_with_small_cutoff():
    op = GR.GreenOperator(S4, "advanced", (2, 2, 0))
    f, sup = GR.time_bump_mode(S4, 1.0, 0.5, [1.0, 2.0, 0.0], power=8, amplitude=np.diag([1.0, 2.0, -1.0, 0.5]),
                               kind="sym2_lower")
    s = C.section("gr", 4, sup, h=f)
    pts = np.array([[1.1, 0.3, 0.2, 0.0], [0.8, 2.0, 4.0, 1.0]])
    assert GR.homotopy_residual(op, s, pts, "advanced") < 1e-7
    assert GR.homotopy_residual(op, s, pts, "dirac") < 1e-7


def test_green_commutes_with_witness():
    rng = np.random.default_rng(3)
    op = GR.GreenOperator(S4, "retarded", (64, 0, 0))
    s = C.random_section("gr", S4, rng, degrees=(1, 2), center=[1.0, 3.0, 1, 1], halfwidths=[0.5, 1.0, 1, 1],
                         degree=1, power=20, active=X1_ONLY)
    pts = np.column_stack([rng.uniform(1.0, 2.0, 3), rng.uniform(2.0, 4.0, 3), np.ones(3), np.ones(3)])
    a = C.apply_w(S4, op.apply(s))
    b = op.apply(C.apply_w(S4, s))
    for name in a.parts:
        assert np.abs(a[name].values(pts) - b[name].values(pts)).max() < 1e-8


# -- time-slice reduction -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def reduction():
    f, sup = GR.bump_source(S2, [2.0, 2.0], [0.4, 0.9], power=20, spatial_modes=[(1.0, [2.0], 0.3), (0.5, [0.0], 0)])
    chi = GR.TemporalCutoff(0.0, 0.6)
    return f, sup, GR.time_slice_reduce(RET, f, sup, chi, image=(-0.5, 1.0))


def test_reduction_certificate(reduction):
    f, sup, res = reduction
    pts = random_points(np.random.default_rng(4), 20, t=(-0.9, 3.9))
    r = f.values(pts) - res.psi_M.values(pts) - GR.wave(S2, res.certificate).values(pts)
    assert np.abs(r).max() < 1e-7


def test_reduced_source_lives_in_transition_slab(reduction):
    _, _, res = reduction
    rng = np.random.default_rng(5)
    outside = np.vstack([random_points(rng, 20, t=(0.61, 3.9)), random_points(rng, 20, t=(-0.9, -0.01))])
    assert np.abs(res.psi_M.values(outside)).max() < 1e-10
    inside = random_points(rng, 20, t=(0.1, 0.5))
    assert np.abs(res.psi_M.values(inside)).max() > 1e-4


def test_reduction_preserves_on_shell_pairings(reduction):
    f, sup, res = reduction
    sols = [GR.mode_solution(S2, [k], ph) for k, ph in [(1, 0.2), (2, 1.0), (0, 0.0), (3, 2.0), (5, 0.1)]]
    a = GR.field_pairings(S2, f, sols, sup)
    b = GR.field_pairings(S2, res.psi_M, sols, res.support, nodes=24, periodic_nodes=160)
    for (va, sa), (vb, sb) in zip(a, b):
        assert abs(va - vb) < 1e-7 * max(sa, sb)
    zero = F.zero("scalar", 2)
    assert GR.field_pairing(S2, f, zero, sup)[0] == 0.0
    assert GR.field_pairing(S2, res.psi_M, zero, res.support, nodes=24, periodic_nodes=160)[0] == 0.0


def test_cutoff_properties():
    chi = GR.TemporalCutoff(0.0, 1.0)
    t = np.linspace(-1, 2, 301)
    v = chi(t)
    assert v.min() >= 0 and v.max() <= 1
    assert np.all(v[t <= 0] == 1) and np.all(v[t >= 1] == 0)
    assert np.all(np.diff(v) <= 1e-15)
    with pytest.raises(ValueError):
        GR.TemporalCutoff(1.0, 0.0)


# -- errors ----------------------------------------------------------------------------------------

def test_mode_cutoff_too_low(bump2):
    f, sup = bump2
    g = GR.GreenOperator(S2, "retarded", (8,)).apply_field(f, sup)
    with pytest.raises(ModeCutoffTooLow):
        g.values(np.array([[1.0, 1.0]]))


def test_mode_free_axis_is_checked():
    f, sup = GR.bump_source(S4, [1.0, 3.0, 3.0, 3.0], [0.5, 1.0, 1.0, 1.0], power=20)
    g = GR.GreenOperator(S4, "retarded", (64, 0, 0)).apply_field(f, sup)
    with pytest.raises(ModeCutoffTooLow):
        g.values(np.array([[1.0, 1.0, 1.0, 1.0]]))


def test_support_near_boundary_is_refused():
    f, sup = GR.bump_source(S2, [-0.8, 3.0], [0.5, 0.8], power=20)
    with pytest.raises(SupportTooCloseToBoundary):
        RET.apply_field(f, sup)


def test_curved_or_open_backgrounds_are_refused():
    with pytest.raises(UnsupportedBackground):
        GR.GreenOperator(G.minkowski(2))


def test_cutoff_outside_image(bump2):
    f, sup = bump2
    with pytest.raises(CutoffOutsideImage):
        GR.time_slice_reduce(RET, f, sup, GR.TemporalCutoff(0.0, 0.6), image=(0.2, 1.0))
