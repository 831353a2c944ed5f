import math

import numpy as np
import pytest

from gravfact import complex as C
from gravfact import fields as F
from gravfact import geometry as G
from gravfact.errors import ClaimViolation, ModeUnsupported, QuadratureDivergence

M4 = G.minkowski(4)
ETA = np.diag([-1.0, 1.0, 1.0, 1.0])


@pytest.fixture(scope="module")
def schw():
    return G.schwarzschild()


def pts4(rng, n=4):
    return rng.uniform(-1, 1, (n, 4))


# -- Q --------------------------------------------------------------------------------------

def test_killing_ghost_has_zero_image():
    s = C.section("gr", 4, X=F.constant_field("vector", [1.0, 0, 0, 0]))
    h = C.apply_q(M4, s)["h"].values(pts4(np.random.default_rng(0)))
    assert np.abs(h).max() < 1e-14


def test_pure_gauge_is_on_shell(schw):
    rng = np.random.default_rng(1)
    p = C.sample_points_for(schw, 4, rng)
    X = C.random_component("vector", 4, rng, p.mean(axis=0), degree=2)
    h = C.apply_q(schw, C.section("gr", 4, X=X))["h"]
    out = C.apply_q(schw, C.section("gr", 4, h=h))["hdag"].values(p)
    assert np.abs(out).max() < 1e-7 * max(C.jet_norm(h, p, 2), 1.0)


def test_conformal_scalar_ghost_gives_weyl_rescaling():
    f = F.make("scalar", lambda x: x[0] * x[1] + 0.5, 4)
    out = C.apply_q(M4, C.section("conformal", 4, f=f))
    p = pts4(np.random.default_rng(2))
    expected = 2 * (p[:, 0] * p[:, 1] + 0.5)[:, None, None] * ETA
    assert np.allclose(out["h"].values(p), expected, atol=1e-13)


def test_degrees_shift_up():
    rng = np.random.default_rng(3)
    s = C.random_section("gr", M4, rng, center=np.zeros(4))
    assert C.apply_q(M4, s).degrees == [0, 1, 2]
    assert C.apply_w(M4, s).degrees == [-1, 0, 1]


# -- W --------------------------------------------------------------------------------------

def test_witness_on_constant_h():
    s = C.section("gr", 4, h=F.constant_field("sym2_lower", np.arange(16.0).reshape(4, 4) + np.arange(16.0).reshape(4, 4).T))
    X = C.apply_w(M4, s)["X"].values(pts4(np.random.default_rng(4)))
    assert np.abs(X).max() < 1e-14


def test_witness_on_inverse_metric():
    s = C.section("gr", 4, hdag=F.constant_field("sym2_upper", np.linalg.inv(ETA)))
    p = pts4(np.random.default_rng(5), 2)
    assert np.allclose(C.apply_w(M4, s, "suppressed")["h"].values(p), ETA)
    # trace reversal of eta in four dimensions is -eta
    assert np.allclose(C.apply_w(M4, s)["h"].values(p), -ETA)


def test_witness_on_killing_covector():
    s = C.section("gr", 4, alpha=F.constant_field("covector", [1.0, 0, 0, 0]))
    out = C.apply_w(M4, s)["hdag"].values(pts4(np.random.default_rng(6)))
    assert np.abs(out).max() < 1e-14


def test_witness_needs_gr_model():
    s = C.section("conformal", 4, f=F.make("scalar", lambda x: x[0], 4))
    with pytest.raises(ModeUnsupported):
        C.apply_w(M4, s)


# -- P --------------------------------------------------------------------------------------

def test_p_on_ghost_mode():
    k = 1.7
    X = F.make("vector", lambda x: [F.J.cos(x[1] * k), 0.0 * x[0], 0.0 * x[0], 0.0 * x[0]], 4)
    p = pts4(np.random.default_rng(7))
    out = C.apply_p(M4, C.section("gr", 4, X=X))["X"].values(p)
    assert np.allclose(out[:, 0], k**2 * np.cos(k * p[:, 1]), atol=1e-12)
    assert np.abs(out[:, 1:]).max() < 1e-12


def test_p_annihilates_tt_wave():
    h = F.tt_plane_wave(1.3, [0.0, 0.0, 1.3])
    p = pts4(np.random.default_rng(8))
    out = C.apply_p(M4, C.section("gr", 4, h=h))["h"].values(p)
    assert np.abs(out).max() < 1e-12


def test_p_matches_reference_on_schwarzschild(schw):
    rng = np.random.default_rng(9)
    p = C.sample_points_for(schw, 3, rng)
    s = C.random_section("gr", schw, rng, degrees=(0,), center=p.mean(axis=0), degree=2)
    a = C.apply_p(schw, s)["h"].values(p)
    b = C.reference_p(schw, s)["h"].values(p)
    assert np.abs(a - b).max() < 1e-8 * max(C.jet_norm(s["h"], p, 2), 1.0)


def test_suppressed_variant_is_not_normally_hyperbolic():
    rng = np.random.default_rng(10)
    p = pts4(rng)
    s = C.random_section("gr", M4, rng, degrees=(0,), center=np.zeros(4), degree=3)
    a = C.apply_p(M4, s, "suppressed")["h"].values(p)
    b = C.reference_p(M4, s)["h"].values(p)
    assert np.abs(a - b).max() > 1e-3 * C.jet_norm(s["h"], p, 2)


# -- pairing --------------------------------------------------------------------------------

def _bump_pair(center, hw, power=3):
    env = F.box_bump(center, hw, power)
    h = F.enveloped(F.constant_field("sym2_lower", ETA), env)
    k = F.enveloped(F.constant_field("sym2_upper", np.linalg.inv(ETA)), env)
    sup = C.box_support(center, hw)
    return C.section("gr", 4, sup, h=h), C.section("gr", 4, sup, hdag=k)


def test_pairing_closed_form():
    hw = np.array([0.5, 0.6, 0.7, 0.8])
    a, b = _bump_pair(np.zeros(4), hw)
    one_d = math.gamma(0.5) * math.gamma(7) / math.gamma(7.5)  # int (1-u^2)^6 du
    exact = 4 * np.prod(hw) * one_d**4
    assert C.pairing(M4, a, b) == pytest.approx(exact, rel=1e-12)
    # the trapezoid rule is separable, so its value is a product of 1D sums
    n = 12
    trap = C.pairing_detail(M4, a, b, nodes=n, rule="trapezoid", check=False).value
    u = np.linspace(-1, 1, n + 2)
    w = np.full(n + 2, 2 / (n + 1))
    w[0] = w[-1] = w[0] / 2
    one_d_trap = float(w @ (1 - u**2) ** 6)
    assert trap == pytest.approx(4 * np.prod(hw) * one_d_trap**4, rel=1e-12)
    assert trap == pytest.approx(exact, rel=1e-2)
    # the higher-degree field in the first slot flips the sign
    assert C.pairing(M4, b, a) == pytest.approx(-exact, rel=1e-12)


def test_pairing_of_disjoint_supports_is_zero():
    a, _ = _bump_pair(np.zeros(4), np.full(4, 0.3))
    _, b = _bump_pair(np.full(4, 2.0), np.full(4, 0.3))
    assert C.pairing(M4, a, b) == 0.0


def test_pairing_detects_underresolved_quadrature():
    a, b = _bump_pair(np.zeros(4), np.full(4, 0.5), power=12)
    with pytest.raises(QuadratureDivergence):
        C.pairing_detail(M4, a, b, nodes=3)


# -- BV action --------------------------------------------------------------------------------

def test_bv_action_terms():
    rng = np.random.default_rng(11)
    c, hw = np.zeros(4), np.full(4, 0.5)
    s = C.random_section("gr", M4, rng, center=c, halfwidths=hw, degree=1, power=3)
    t = C.random_section("gr", M4, rng, degrees=(0,), center=c, halfwidths=hw, degree=1, power=3)
    killing = F.constant_field("vector", [1.0, 0.5, 0, 0])
    out = C.bv_action_terms(M4, s["h"], s["hdag"], killing, s["X"], s["X"], s["alpha"], s.support, h2=t["h"],
                            nodes=12)
    scale = max(abs(out["quadratic"]), 1e-12)
    assert abs(out["quadratic"] - out["quadratic_swapped"]) < 1e-8 * scale
    assert abs(out["mixing"]) < 1e-14
    assert out["ghost"] == pytest.approx(2 * out["ghost_word"], rel=1e-10)
    assert abs(out["ghost_word"]) > 0


# -- inclusion ---------------------------------------------------------------------------------

def test_inclusion_needs_conformally_flat_einstein(schw):
    s = C.section("gr", 4, X=F.constant_field("vector", [1.0, 0, 0, 0]))
    with pytest.raises(ClaimViolation):
        C.include_in_conformal(schw, s)
    inc = C.include_in_conformal(M4, s)
    assert inc.model == "conformal" and set(inc.parts) == {"X"}


def test_inclusion_kills_pure_gauge_in_bach_mode():
    rng = np.random.default_rng(12)
    X, f, h = C.trig_gauge_direction(M4, rng, with_scalar=False)
    p = pts4(rng, 3)
    out = C.apply_q(M4, C.section("conformal", 4, h=h), bach_mode="fd")["hdag"].values(p)
    assert np.abs(out).max() < 1e-6 * C.jet_norm(h, p, 4)


# -- verification reports ------------------------------------------------------------------------

def test_verify_complex_minkowski_rows_pass():
    rows = C.verify_complex("gr", M4, trials=3, seed=0, pairing_trials=1)
    assert len(rows) == 2 + 3 + 4 + 3 + 3
    bad = [(r.id, r.residual) for r in rows if not r.passed]
    assert not bad
    assert all(r.id.startswith("complex.") and r.id.endswith(".minkowski4") for r in rows)


def test_verify_complex_schwarzschild_pointwise(schw):
    rows = C.verify_complex("gr", schw, trials=2, seed=0, checks=("q_squared", "qww", "p_identification"))
    assert rows and all(r.passed for r in rows)


def test_verify_conformal_rows_pass():
    rows = C.verify_complex("conformal", M4, trials=1, seed=0)
    assert {r.id.split(".")[2] for r in rows} == {"rho_dual", "rho_closed_form", "ker_bach", "chain_map"}
    assert all(r.passed for r in rows)


def test_suppressed_variant_fails_identification_rows():
    rows = C.verify_complex("gr", M4, trials=2, seed=0, variant="suppressed", checks=("p_identification",))
    failing = {r.id for r in rows if not r.passed}
    assert "complex.p_identification.deg0.minkowski4" in failing


def test_negative_control_matches_lie_derivative_of_ricci():
    rng = np.random.default_rng(0)
    hp = C.random_component("sym2_lower", 4, rng, np.zeros(4), degree=2)
    bad = G.perturbed(G.minkowski(4), hp, 0.05)
    X = C.random_component("vector", 4, rng, np.zeros(4), degree=2)
    out = C.q_squared_obstruction(bad, X, rng.uniform(-0.5, 0.5, (3, 4)))
    assert out["residual"] > 1e-3
    assert out["prediction_error"] < 1e-6
