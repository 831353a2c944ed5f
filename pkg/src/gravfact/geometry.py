"""Pointwise tensor calculus on analytic Lorentzian metrics.

Everything is computed on jets (truncated Taylor expansions) of the metric
components around batches of base points, so derivatives are exact up to
rounding.  Conventions, fixed once for the whole package:

* signature (-, +, ..., +); ``box = g^{ab} nabla_a nabla_b``;
* ``gamma[a, b, c] = Gamma^a_{bc}``;
* ``riemann[a, b, c, d] = R^a_{bcd} = d_c Gamma^a_{db} - d_d Gamma^a_{cb} + ...``
  (positive scalar curvature on spheres), ``ricci[b, d] = R^a_{bad}``;
* covariant derivatives append the derivative index last:
  ``cov(T)[..., k] = nabla_k T``, so ``cov(cov(T))[..., k1, k2]`` is
  ``nabla_k2 nabla_k1 T``;
* ``L_X g = nabla_a X_b + nabla_b X_a``; ``div(h)_b = nabla^a h_{ab}``.

Arrays returned by the value-level functions have shape ``(*batch, *tensor)``
where ``batch`` is the shape of the point array minus its last axis.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np

from . import jets as J
from .errors import (
    ClaimViolation,
    DimensionUnsupported,
    GaugeViolation,
    InvariantViolation,
    ModeUnsupported,
    OutOfChart,
    SingularMetric,
)
from .fields import TensorField

DET_THRESHOLD = 1e-12
CHART_KINDS = ("minkowski_box", "torus_slab", "spherical_static", "generic")
_LET = "abcdefghijklmnopqrstuvw"

# Normalization of the closed-form linearized Bach operator on flat space:
# d/dt B(eta + t h) = TT_BACH_FACTOR * box^2 h for transverse-traceless h.
# Fixed by comparison with the finite-difference oracle (see tests).
TT_BACH_FACTOR = 0.25


@dataclass(frozen=True)
class Claims:
    ricci_flat: bool = False
    bach_flat: bool = False
    conformally_flat: bool = False
    einstein: bool = False

    def as_dict(self) -> dict:
        return {"ricci_flat": self.ricci_flat, "bach_flat": self.bach_flat,
                "conformally_flat": self.conformally_flat, "einstein": self.einstein}


def _dt(x):
    return [1.0] + [0.0] * (len(x) - 1)


@dataclass(frozen=True, eq=False)
class Spacetime:
    """An analytic chart with a Lorentzian metric and a time orientation."""

    dim: int
    chart: str
    metric: Callable
    bounds: tuple
    time_orientation: Callable = _dt
    periods: tuple | None = None
    claims: Claims = Claims()
    name: str = "spacetime"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (2, 4):
            raise DimensionUnsupported(f"only dimensions 2 and 4 are supported, got {self.dim}")
        if self.chart not in CHART_KINDS:
            raise ValueError(f"unknown chart kind {self.chart!r}")
        if len(self.bounds) != self.dim:
            raise ValueError("need one (lo, hi) bound per coordinate")
        if self.periods is not None and len(self.periods) != self.dim:
            raise ValueError("need one period entry per coordinate")

    # -- charts ---------------------------------------------------------
    def is_periodic(self, i: int) -> bool:
        return self.periods is not None and self.periods[i] is not None

    def check_points(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.dim:
            raise OutOfChart(f"points must have {self.dim} coordinates")
        for i, (lo, hi) in enumerate(self.bounds):
            if self.is_periodic(i):
                continue
            c = pts[..., i]
            if np.any(c <= lo) or np.any(c >= hi) or not np.all(np.isfinite(c)):
                raise OutOfChart(f"coordinate {i} outside ({lo}, {hi})")
        return pts

    def sample_points(self, n: int, rng: np.random.Generator, margin: float = 0.1) -> np.ndarray:
        out = np.empty((n, self.dim))
        for i, (lo, hi) in enumerate(self.bounds):
            w = hi - lo
            out[:, i] = rng.uniform(lo + margin * w, hi - margin * w, size=n)
        return out

    # -- metric evaluation ------------------------------------------------
    def metric_jets(self, points, order: int) -> J.JetArray:
        pts = self.check_points(points)
        g = J.evaluate(self.metric, pts, order)
        g0 = g.value()
        det = np.linalg.det(g0)
        if np.any(np.abs(det) < DET_THRESHOLD):
            raise SingularMetric(f"|det g| below {DET_THRESHOLD}")
        return g

    def metric_values(self, points) -> np.ndarray:
        return self.metric_jets(points, 0).value()

    def time_orientation_values(self, points) -> np.ndarray:
        pts = self.check_points(points)
        return J.evaluate(self.time_orientation, pts, 0).value()

    # -- invariants -------------------------------------------------------
    def validate(self, points=None, n: int = 3, seed: int = 0, check_claims: bool = True) -> None:
        """Check symmetry, signature, time orientation and asserted claims."""
        if points is None:
            points = self.sample_points(n, np.random.default_rng(seed), margin=0.2)
        pts = self.check_points(points)
        g = self.metric_values(pts)
        scale = 1.0 + np.abs(g).max()
        if not np.allclose(g, np.swapaxes(g, -1, -2), atol=1e-13 * scale, rtol=0):
            raise InvariantViolation("metric is not symmetric")
        ev = np.linalg.eigvalsh(0.5 * (g + np.swapaxes(g, -1, -2)))
        neg = (ev < 0).sum(axis=-1)
        if np.any(neg != 1) or np.any(np.abs(ev) < 1e-14 * scale):
            raise InvariantViolation("metric signature is not (-,+,...,+)")
        T = self.time_orientation_values(pts)
        if np.any(np.einsum("...a,...ab,...b->...", T, g, T) >= 0):
            raise InvariantViolation("time orientation is not timelike")
        if check_claims:
            check_claims_at(self, pts)


def check_claims_at(st: Spacetime, pts: np.ndarray, rtol: float = 1e-8) -> None:
    c = st.claims
    if not (c.ricci_flat or c.bach_flat or c.conformally_flat or c.einstein):
        return
    bg = Background(st, pts, 4 if c.bach_flat else 2)
    scale = curvature_scale(bg)
    if c.ricci_flat:
        res = np.abs(bg.ricci.value()).max()
        if res > rtol * scale:
            raise ClaimViolation(f"{st.name}: Ricci residual {res:.2e} is not zero")
    if c.einstein:
        R = bg.scalar.value()
        res = np.abs(bg.ricci.value() - (R / st.dim)[..., None, None] * bg.g.value()).max()
        if res > rtol * scale:
            raise ClaimViolation(f"{st.name}: not an Einstein metric (residual {res:.2e})")
    if c.conformally_flat and st.dim == 4:
        res = np.abs(bg.weyl_down.value()).max()
        if res > rtol * scale:
            raise ClaimViolation(f"{st.name}: Weyl residual {res:.2e} is not zero")
    if c.bach_flat:
        res = np.abs(bg.bach.value()).max()
        if res > 1e-6 * scale**2:
            raise ClaimViolation(f"{st.name}: Bach residual {res:.2e} is not zero")


def curvature_scale(bg: "Background") -> float:
    """A per-batch magnitude used to turn absolute residuals into relative ones."""
    return float(max(np.abs(bg.riemann.value()).max(), 1e-3))


# -- constructors --------------------------------------------------------------

def minkowski(dim: int = 4, extent: float = 10.0) -> Spacetime:
    def g(x):
        return [[(-1.0 if (a == b == 0) else (1.0 if a == b else 0.0)) for b in range(dim)] for a in range(dim)]

    return Spacetime(dim, "minkowski_box", g, tuple((-extent, extent) for _ in range(dim)),
                     claims=Claims(True, True, True, True), name=f"minkowski{dim}",
                     params={"extent": extent})


def torus_slab(dim: int = 2, t_interval=(-1.0, 2.0), L=2 * np.pi) -> Spacetime:
    """Flat slab (a, b) x T^{dim-1} with circumferences ``L`` (scalar or per direction)."""
    Ls = tuple(float(v) for v in np.broadcast_to(np.asarray(L, dtype=float), (dim - 1,)))

    def g(x):
        return [[(-1.0 if (a == b == 0) else (1.0 if a == b else 0.0)) for b in range(dim)] for a in range(dim)]

    bounds = (tuple(t_interval),) + tuple((0.0, l) for l in Ls)
    return Spacetime(dim, "torus_slab", g, bounds, periods=(None,) + Ls,
                     claims=Claims(True, True, True, True), name=f"torus_slab{dim}",
                     params={"t_interval": tuple(t_interval), "L": Ls})


def schwarzschild(mass: float = 1.0, r_range=None, validate: bool = True) -> Spacetime:
    """Exterior Schwarzschild in (t, r, theta, phi)."""
    m = float(mass)
    r_range = r_range or (2.2 * m, 100.0 * m)

    def g(x):
        r, th = x[1], x[2]
        f = 1.0 - 2.0 * m / r
        s = J.sin(th)
        return [[-f, 0.0, 0.0, 0.0], [0.0, 1.0 / f, 0.0, 0.0], [0.0, 0.0, r * r, 0.0], [0.0, 0.0, 0.0, r * r * s * s]]

    st = Spacetime(4, "spherical_static", g, ((-50.0, 50.0), tuple(r_range), (0.05, np.pi - 0.05), (-np.pi, np.pi)),
                   claims=Claims(ricci_flat=True, bach_flat=True, einstein=True), name="schwarzschild",
                   params={"mass": m})
    if validate:
        st.validate(np.array([[0.0, 4.0 * m, 1.0, 0.3]]))
    return st


def static_spherical(potential: Callable, r_range, claims: Claims = Claims(), name: str = "static",
                     params: dict | None = None, validate: bool = True) -> Spacetime:
    """-V(r) dt^2 + dr^2 / V(r) + r^2 dOmega^2."""

    def g(x):
        r, th = x[1], x[2]
        V = potential(r)
        s = J.sin(th)
        return [[-V, 0.0, 0.0, 0.0], [0.0, 1.0 / V, 0.0, 0.0], [0.0, 0.0, r * r, 0.0], [0.0, 0.0, 0.0, r * r * s * s]]

    st = Spacetime(4, "spherical_static", g, ((-50.0, 50.0), tuple(r_range), (0.05, np.pi - 0.05), (-np.pi, np.pi)),
                   claims=claims, name=name, params=params or {})
    if validate:
        r0 = 0.5 * (r_range[0] + r_range[1])
        st.validate(np.array([[0.0, r0, 1.0, 0.3]]))
    return st


def mannheim(b: float = 1.0, c: float = 0.05, r_range=(3.0, 15.0), validate: bool = True) -> Spacetime:
    """Static potential V(r) = 1 - 2b/r + c r.

    This two-parameter potential is Bach-flat only to first order in b*c
    (its Bach tensor is proportional to b*c), so no Bach-flatness claim is
    attached.  :func:`mannheim_kazanas` is the exact solution.
    """
    return static_spherical(lambda r: 1.0 - 2.0 * b / r + c * r, r_range,
                            Claims(), "mannheim", {"b": b, "c": c}, validate)


def mannheim_kazanas(beta: float = 1.0, gamma: float = 0.05, k: float = 0.0, r_range=(3.0, 15.0),
                     validate: bool = True) -> Spacetime:
    """Exact static Bach-flat potential 1 - 3 beta gamma - beta (2 - 3 beta gamma)/r + gamma r - k r^2."""
    w = 1.0 - 3.0 * beta * gamma
    a = beta * (2.0 - 3.0 * beta * gamma)
    return static_spherical(lambda r: w - a / r + gamma * r - k * r * r, r_range,
                            Claims(bach_flat=True), "mannheim_kazanas",
                            {"beta": beta, "gamma": gamma, "k": k}, validate)


def conformally_flat(f: Callable, dim: int = 4, extent: float = 10.0) -> Spacetime:
    """e^{2f} eta for a scalar callable f on coordinate jets."""
    base = minkowski(dim, extent)
    out = conformal_rescale(base, f)
    return replace(out, name="conformally_flat")


def from_metric(dim: int, metric: Callable, bounds, time_orientation: Callable = _dt,
                claims: Claims = Claims(), name: str = "generic", validate: bool = True) -> Spacetime:
    st = Spacetime(dim, "generic", metric, tuple(tuple(b) for b in bounds), time_orientation,
                   claims=claims, name=name)
    if validate:
        st.validate()
    return st


def perturbed(st: Spacetime, h: TensorField, eps: float) -> Spacetime:
    """g + eps h, with all claims cleared."""
    base = st.metric
    hf = h.func

    def g(x):
        a, b = base(x), hf(x)
        return [[a[i][j] + eps * b[i][j] for j in range(st.dim)] for i in range(st.dim)]

    return replace(st, metric=g, claims=Claims(), name=f"{st.name}+{eps:g}h", chart=st.chart)


def conformal_rescale(st: Spacetime, f: Callable) -> Spacetime:
    """e^{2f} g; only the conformal-flatness claim survives."""
    base = st.metric

    def g(x):
        w = J.exp(2.0 * f(x))
        m = base(x)
        return [[w * m[i][j] for j in range(st.dim)] for i in range(st.dim)]

    claims = Claims(conformally_flat=st.claims.conformally_flat)
    return replace(st, metric=g, claims=claims, name=f"e^2f*{st.name}")


# -- jet-level machinery -----------------------------------------------------

def inverse(g: J.JetArray) -> J.JetArray:
    """Matrix inverse of a jet-valued matrix (last two tensor axes)."""
    g0i = np.linalg.inv(g.value())
    n = g._wrap(g.data.copy())
    n.data[..., 0] = 0.0
    A = -J.einsum("ab,bc->ac", g0i, n)
    term = J.const(g0i, g.ctx)
    out = term
    for _ in range(g.ctx.order):
        term = J.einsum("ab,bc->ac", A, term)
        out = out + term
    out.valid = g.valid
    return out


def sqrt_abs_det(g: J.JetArray) -> J.JetArray:
    """sqrt|det g| as a jet via log det(1 + g0^{-1} n)."""
    g0 = g.value()
    g0i = np.linalg.inv(g0)
    n = g._wrap(g.data.copy())
    n.data[..., 0] = 0.0
    B = J.einsum("ab,bc->ac", g0i, n)
    logdet = J.zeros(B.shape[:-2], g.ctx)
    P = B
    for k in range(1, g.ctx.order + 1):
        logdet = logdet + J.einsum("aa->", P) * ((-1.0) ** (k + 1) / k)
        if k < g.ctx.order:
            P = J.einsum("ab,bc->ac", P, B)
    logdet.valid = g.valid
    return J.exp(0.5 * logdet) * np.sqrt(np.abs(np.linalg.det(g0)))


class Background:
    """Metric jets at a batch of points with curvature computed on demand."""

    def __init__(self, st: Spacetime, points, order: int = 2):
        self.st = st
        self.dim = st.dim
        self.points = st.check_points(points)
        self.order = order
        self.g = st.metric_jets(self.points, order)
        self.ginv = inverse(self.g)

    @property
    def batch(self) -> tuple:
        return self.points.shape[:-1]

    @cached_property
    def gamma(self) -> J.JetArray:
        dg = self.g.grad()
        S = J.einsum("dcb->dbc", dg) + dg - J.einsum("bcd->dbc", dg)
        return J.einsum("ad,dbc->abc", self.ginv, S) * 0.5

    @cached_property
    def riemann(self) -> J.JetArray:
        G = self.gamma
        dG = G.grad()
        return (J.einsum("adbc->abcd", dG) - J.einsum("acbd->abcd", dG)
                + J.einsum("ace,edb->abcd", G, G) - J.einsum("ade,ecb->abcd", G, G))

    @cached_property
    def riemann_down(self) -> J.JetArray:
        return J.einsum("ae,ebcd->abcd", self.g, self.riemann)

    @cached_property
    def ricci(self) -> J.JetArray:
        return J.einsum("abad->bd", self.riemann)

    @cached_property
    def scalar(self) -> J.JetArray:
        return J.einsum("bd,bd->", self.ginv, self.ricci)

    @cached_property
    def weyl_down(self) -> J.JetArray:
        n = self.dim
        if n < 3:
            raise DimensionUnsupported("the Weyl tensor needs dim >= 3")
        g, Ric, R = self.g, self.ricci, self.scalar
        gR = J.einsum("ac,bd->abcd", g, Ric)
        kul = gR - J.einsum("abcd->abdc", gR) - J.einsum("abcd->bacd", gR) + J.einsum("abcd->badc", gR)
        gg = J.einsum("ac,bd->abcd", g, g)
        gg = gg - J.einsum("abcd->abdc", gg)
        return self.riemann_down - kul * (1.0 / (n - 2)) + J.einsum(",abcd->abcd", R, gg) * (1.0 / ((n - 1) * (n - 2)))

    @cached_property
    def weyl_up(self) -> J.JetArray:
        return J.einsum("ae,ebcd->abcd", self.ginv, self.weyl_down)

    @cached_property
    def bach(self) -> J.JetArray:
        if self.dim != 4:
            raise DimensionUnsupported("the Bach tensor is only defined here in dimension 4")
        W = self.weyl_down
        N2 = cov(self, cov(self, W, "dddd"), "ddddd")
        term1 = J.einsum("al,bk,amnbkl->mn", self.ginv, self.ginv, N2)
        Rup = J.einsum("ac,bd,cd->ab", self.ginv, self.ginv, self.ricci)
        term2 = J.einsum("ab,amnb->mn", Rup, W) * 0.5
        return term1 + term2


def cov(bg: Background, T: J.JetArray, kinds: str) -> J.JetArray:
    """Covariant derivative; the derivative index is appended last."""
    n = len(kinds)
    idx = _LET[:n]
    out = T.grad()
    G = bg.gamma
    if not G.data.any():
        return out
    for p, kd in enumerate(kinds):
        sub = idx[:p] + "x" + idx[p + 1:]
        if kd == "u":
            out = out + J.einsum(f"{idx[p]}yx,{sub}->{idx}y", G, T)
        elif kd == "d":
            out = out - J.einsum(f"xy{idx[p]},{sub}->{idx}y", G, T)
        else:
            raise ValueError("kinds must be made of 'u' and 'd'")
    return out


def box(bg: Background, T: J.JetArray, kinds: str) -> J.JetArray:
    n = len(kinds)
    idx = _LET[:n]
    N2 = cov(bg, cov(bg, T, kinds), kinds + "d")
    return J.einsum(f"xy,{idx}xy->{idx}", bg.ginv, N2)


def sharp1(bg: Background, w: J.JetArray) -> J.JetArray:
    return J.einsum("ab,b->a", bg.ginv, w)


def flat1(bg: Background, v: J.JetArray) -> J.JetArray:
    return J.einsum("ab,b->a", bg.g, v)


def sharp2(bg: Background, h: J.JetArray) -> J.JetArray:
    return J.einsum("ac,bd,cd->ab", bg.ginv, bg.ginv, h)


def flat2(bg: Background, k: J.JetArray) -> J.JetArray:
    return J.einsum("ac,bd,cd->ab", bg.g, bg.g, k)


def trace(bg: Background, h: J.JetArray, kinds: str = "dd") -> J.JetArray:
    m = bg.ginv if kinds == "dd" else bg.g
    return J.einsum("ab,ab->", m, h)


def trace_reverse(bg: Background, h: J.JetArray, kinds: str = "dd", check_dim: bool = True) -> J.JetArray:
    """I(h) = h - (1/2) tr(h) g."""
    if check_dim and bg.dim != 4:
        raise DimensionUnsupported("trace reversal is only an involution in dimension 4")
    m = bg.g if kinds == "dd" else bg.ginv
    return h - J.einsum(",ab->ab", trace(bg, h, kinds), m) * 0.5


def div(bg: Background, h: J.JetArray, kinds: str = "dd") -> J.JetArray:
    """div(h)_b = g^{ac} nabla_c h_{ab} for lower input; nabla_a h^{ab} for upper input."""
    D = cov(bg, h, kinds)
    if kinds == "dd":
        return J.einsum("ac,abc->b", bg.ginv, D)
    if kinds == "uu":
        return J.einsum("aba->b", D)
    raise ValueError("div takes 'dd' or 'uu' symmetric tensors")


def sym_grad(bg: Background, w: J.JetArray) -> J.JetArray:
    """nabla_a w_b + nabla_b w_a, i.e. L_{w^sharp} g."""
    D = cov(bg, w, "d")
    return J.einsum("ba->ab", D) + D


def lie_metric(bg: Background, X: J.JetArray) -> J.JetArray:
    """L_X g from the coordinate formula (no connection)."""
    return lie_02(X, bg.g)


def lie_02(X: J.JetArray, T: J.JetArray) -> J.JetArray:
    dT = T.grad()
    dX = X.grad()
    return (J.einsum("c,abc->ab", X, dT) + J.einsum("cb,ca->ab", T, dX)
            + J.einsum("ac,cb->ab", T, dX))


def bracket(X: J.JetArray, Y: J.JetArray) -> J.JetArray:
    return J.einsum("c,ac->a", X, Y.grad()) - J.einsum("c,ac->a", Y, X.grad())


def riem_action(bg: Background, h: J.JetArray) -> J.JetArray:
    """R^a_{mn}^b h_{ab}."""
    return J.einsum("amnc,cb,ab->mn", bg.riemann, bg.ginv, h)


def wave_operator(bg: Background, h: J.JetArray) -> J.JetArray:
    """-box h + 2 Riem(h) on symmetric (0,2) tensors."""
    return -box(bg, h, "dd") + riem_action(bg, h) * 2.0


def linearized_ricci_jets(bg: Background, h: J.JetArray, form: str = "full") -> J.JetArray:
    """DRic_g(h).

    ``full``: exact linearization on any background,
    ``(nabla^c nabla_a h_bc + nabla^c nabla_b h_ac - box h_ab - nabla_a nabla_b tr h) / 2``.
    ``tt``: ``(-box h + 2 Riem h) / 2``, valid for transverse-traceless h on Ricci-flat g.
    ``witness``: ``((-box + 2 Riem) h + L_{div(I h)} g) / 2``, equal to ``full`` on Ricci-flat g.
    """
    if form == "full":
        N2 = cov(bg, cov(bg, h, "dd"), "ddd")
        t1 = J.einsum("ck,bcak->ab", bg.ginv, N2)
        lap = J.einsum("ck,abck->ab", bg.ginv, N2)
        tr = trace(bg, h)
        hess = cov(bg, cov(bg, tr, ""), "d")
        return (t1 + J.einsum("ab->ba", t1) - lap - hess) * 0.5
    if form == "tt":
        return wave_operator(bg, h) * 0.5
    if form == "witness":
        Ih = trace_reverse(bg, h, check_dim=False)
        return (wave_operator(bg, h) + sym_grad(bg, div(bg, Ih))) * 0.5
    raise ValueError(f"unknown form {form!r}")


# -- value-level operations ----------------------------------------------------

@dataclass
class Curvature:
    christoffel: np.ndarray
    riemann: np.ndarray
    riemann_down: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray

    def kretschmann(self, ginv: np.ndarray) -> np.ndarray:
        up = np.einsum("...ae,...bf,...cg,...dh,...efgh->...abcd", ginv, ginv, ginv, ginv, self.riemann_down)
        return np.einsum("...abcd,...abcd->...", up, self.riemann_down)


def curvature(st: Spacetime, x, check: bool = True) -> Curvature:
    bg = Background(st, x, 2)
    out = Curvature(bg.gamma.value(), bg.riemann.value(), bg.riemann_down.value(),
                    bg.ricci.value(), bg.scalar.value())
    if check:
        R = out.riemann_down
        scale = 1.0 + np.abs(R).max()
        bianchi = R + np.einsum("...abcd->...acdb", R) + np.einsum("...abcd->...adbc", R)
        anti = np.abs(R + np.swapaxes(R, -1, -2)).max() + np.abs(R + np.swapaxes(R, -3, -4)).max()
        if np.abs(bianchi).max() > 1e-10 * scale or anti > 1e-10 * scale:
            raise InvariantViolation("Riemann tensor fails its algebraic identities")
    return out


def kretschmann(st: Spacetime, x) -> np.ndarray:
    bg = Background(st, x, 2)
    return curvature(st, x, check=False).kretschmann(bg.ginv.value())


def weyl_tensor(st: Spacetime, x) -> dict:
    """Weyl tensor in (0,4) form ``down`` and (1,3) form ``up`` (first index raised)."""
    bg = Background(st, x, 2)
    return {"down": bg.weyl_down.value(), "up": bg.weyl_up.value()}


def bach_tensor(st: Spacetime, x) -> np.ndarray:
    if st.dim != 4:
        raise DimensionUnsupported("the Bach tensor is only defined here in dimension 4")
    return Background(st, x, 4).bach.value()


def weyl_action_density(st: Spacetime, x) -> dict:
    """|W|^2 = W_{abcd} W^{abcd} and the density |W|^2 sqrt|det g|."""
    if st.dim != 4:
        raise DimensionUnsupported("the Weyl action is only used in dimension 4")
    bg = Background(st, x, 2)
    W = bg.weyl_down
    gi = bg.ginv
    sq = J.einsum("ae,bf,cg,dh,efgh,abcd->", gi, gi, gi, gi, W, W).value()
    vol = sqrt_abs_det(bg.g).value()
    return {"norm2": sq, "density": sq * vol}


def lie_ops(st: Spacetime, X: TensorField, Y: TensorField, x) -> dict:
    bg = Background(st, x, 1)
    Xj, Yj = X.jets(bg.points, 1), Y.jets(bg.points, 1)
    return {"lie_g": lie_metric(bg, Xj).value(), "bracket": bracket(Xj, Yj).value()}


def sym2_algebra(st: Spacetime, h: TensorField, x) -> dict:
    """div, trace, musical conversions and (in dim 4) trace reversal of a symmetric field."""
    kinds = h.kinds
    if kinds not in ("dd", "uu"):
        raise ValueError("sym2_algebra takes symmetric (0,2) or (2,0) fields")
    bg = Background(st, x, 1)
    hj = h.jets(bg.points, 1)
    out = {"div": div(bg, hj, kinds).value(), "trace": trace(bg, hj, kinds).value()}
    if kinds == "dd":
        out["sharp"] = sharp2(bg, hj).value()
    else:
        out["flat"] = flat2(bg, hj).value()
    if st.dim == 4:
        out["trace_reversed"] = trace_reverse(bg, hj, kinds).value()
    return out


def is_tt(bg: Background, h: J.JetArray, tol: float = 1e-9) -> bool:
    scale = 1.0 + np.abs(h.value()).max()
    d = np.abs(div(bg, h).value()).max()
    t = np.abs(trace(bg, h).value()).max()
    return bool(d <= tol * scale and t <= tol * scale)


def linearized_ricci(st: Spacetime, h: TensorField, x, form: str = "full", raised: bool = False) -> np.ndarray:
    bg = Background(st, x, 3)
    hj = h.jets(bg.points, 3)
    if form == "tt" and not is_tt(bg, hj):
        warnings.warn("TT form requested for a field that is not transverse-traceless", GaugeViolation, stacklevel=2)
    out = linearized_ricci_jets(bg, hj, form)
    if raised:
        out = sharp2(bg, out)
    return out.value()


def ricci_values(st: Spacetime, x) -> np.ndarray:
    return Background(st, x, 2).ricci.value()


def central_difference(fn: Callable[[float], np.ndarray], step: float, richardson: bool = True) -> np.ndarray:
    """d/dt fn(t) at 0 by central differences with one optional Richardson level."""
    def d(h):
        return (fn(h) - fn(-h)) / (2.0 * h)

    if not richardson:
        return d(step)
    return (4.0 * d(step / 2.0) - d(step)) / 3.0


def linearized_ricci_fd(st: Spacetime, h: TensorField, x, step: float = 1e-3, richardson: bool = True) -> np.ndarray:
    """Oracle: d/dt Ric(g + t h) at t = 0."""
    return central_difference(lambda t: ricci_values(perturbed(st, h, t), x), step, richardson)


def linearized_bach(st: Spacetime, h: TensorField, x, mode: str = "fd", step: float = 1e-3,
                    richardson: bool = True) -> np.ndarray:
    """DB_g(h): ``mode='fd'`` differentiates B(g + t h); ``mode='tt'`` is the flat closed form."""
    if st.dim != 4:
        raise DimensionUnsupported("the Bach tensor is only defined here in dimension 4")
    if mode == "fd":
        return central_difference(lambda t: bach_tensor(perturbed(st, h, t), x), step, richardson)
    if mode == "tt":
        if not (st.claims.conformally_flat and st.claims.einstein):
            raise ModeUnsupported("closed-form linearized Bach needs a conformally flat Einstein background")
        bg = Background(st, x, 4)
        if np.abs(bg.riemann.value()).max() > 1e-12:
            raise ModeUnsupported("closed-form linearized Bach is implemented for flat backgrounds only")
        hj = h.jets(bg.points, 4)
        if not is_tt(bg, hj):
            warnings.warn("TT closed form used on a field that is not transverse-traceless", GaugeViolation, stacklevel=2)
        return (box(bg, box(bg, hj, "dd"), "dd") * TT_BACH_FACTOR).value()
    raise ModeUnsupported(f"unknown linearized Bach mode {mode!r}")


@dataclass
class PointEval:
    """Partial derivatives of a field's components at one point, by total order."""

    point: np.ndarray
    jets: dict

    def schwarz_residual(self) -> float:
        """Largest asymmetry of any mixed partial under index permutation (relative)."""
        worst = 0.0
        for k, d in self.jets.items():
            if k < 2:
                continue
            scale = 1.0 + np.abs(d).max()
            nt = d.ndim - k
            for i in range(k - 1):
                perm = list(range(d.ndim))
                perm[nt + i], perm[nt + i + 1] = perm[nt + i + 1], perm[nt + i]
                worst = max(worst, float(np.abs(d - d.transpose(perm)).max() / scale))
        return worst


def point_eval(field_: TensorField, x, order: int) -> PointEval:
    x = np.asarray(x, dtype=float)
    j = field_.jets(x, order)
    return PointEval(x, {k: J.derivative_tensor(j, k) for k in range(order + 1)})


# -- verification rows ----------------------------------------------------------

BACH_BACKGROUNDS = {
    "schwarzschild": lambda: schwarzschild(1.0),
    "mannheim_kazanas": lambda: mannheim_kazanas(1.0, 0.05),
    "mannheim": lambda: mannheim(1.0, 0.05),
}


def _static_box(n: int, rng: np.random.Generator, r=(4.0, 10.0)) -> np.ndarray:
    # a compact patch of the static chart where random conformal factors stay tame
    return np.column_stack([rng.uniform(-1, 1, n), rng.uniform(*r, n), rng.uniform(0.5, 2.5, n),
                            rng.uniform(-2, 2, n)])


def _rel(a, b) -> float:
    return float(np.abs(np.asarray(a) - np.asarray(b)).max() / max(np.abs(b).max(), 1e-300))


def verify_geometry(seed: int = 0, points: int = 10, bach_backgrounds=("schwarzschild", "mannheim_kazanas")) -> list:
    """Curvature oracles, conformal weights of Weyl and Bach, Bach-flat backgrounds.

    ``bach_backgrounds`` is a sequence of names from :data:`BACH_BACKGROUNDS`
    or a mapping from row names to spacetimes.
    """
    from . import fields as F
    from . import oracles as O
    from .reports import Row

    rng = np.random.default_rng(seed)
    schw = schwarzschild(1.0)
    pts = _static_box(points, rng)
    rows = []
    x0 = pts[0]
    rows.append(Row("geometry.riemann.fd_oracle.schwarzschild", "jet Riemann tensor vs finite differences",
                    "curvature of the background", float(np.abs(curvature(schw, x0).riemann
                                                                - O.fd_riemann(O.schwarzschild_metric(1.0), x0)).max()),
                    1e-6, curvature_scale(Background(schw, x0[None], 2))))
    c = curvature(schw, pts)
    rows.append(Row("geometry.ricci_flat.schwarzschild", f"max |Ric| at {points} points", "vacuum Einstein equation",
                    float(np.abs(c.ricci).max()), 1e-10, float(np.abs(c.riemann).max())))
    rows.append(Row("geometry.kretschmann.schwarzschild", "Kretschmann scalar vs 48 M^2 / r^6 (relative)",
                    "curvature of the background", _rel(kretschmann(schw, pts), O.schwarzschild_kretschmann(1.0, pts[:, 1])),
                    1e-10))
    f = F.random_polynomial(4, 2, rng, pts.mean(axis=0), 0.05)
    W1 = weyl_tensor(schw, pts)["up"]
    W2 = weyl_tensor(conformal_rescale(schw, f), pts)["up"]
    rows.append(Row("geometry.weyl.conformal_weight0", "(1,3) Weyl tensor before/after g -> e^{2f} g (relative)",
                    "conformal invariance of the Weyl tensor", _rel(W2, W1), 1e-9))
    base = mannheim(1.0, 0.05)
    xm = _static_box(points, rng)
    f = F.random_polynomial(4, 2, rng, xm.mean(axis=0), 0.05)
    B1 = bach_tensor(base, xm)
    B2 = bach_tensor(conformal_rescale(base, f), xm)
    fv = J.evaluate(f, xm, 0).value()
    rows.append(Row("geometry.bach.conformal_weight_minus2", "B(e^{2f} g) vs e^{-2f} B(g) on a non-Bach-flat background",
                    "conformal weight of the Bach tensor", _rel(B2, np.exp(-2 * fv)[:, None, None] * B1), 1e-6))
    if not isinstance(bach_backgrounds, dict):
        bach_backgrounds = {name: BACH_BACKGROUNDS[name]() for name in bach_backgrounds}
    for name, st in bach_backgrounds.items():
        if st.dim != 4:
            raise DimensionUnsupported(f"{name}: the Bach tensor needs dimension 4")
        x = _static_box(points, rng) if st.chart == "spherical_static" else st.sample_points(points, rng, 0.1)
        B = np.abs(bach_tensor(st, x)).max()
        scale = curvature_scale(Background(st, x, 2)) ** 2
        rows.append(Row(f"geometry.bach.vanishes.{name}", f"max |B| at {points} points relative to curvature^2",
                        "Bach equation", float(B), 1e-6, scale))
    # DB_g(2 f g) = -2 f B(g): second order convergence of the finite-difference linearization
    x = np.array([[0.0, 6.0, 1.0, 0.2]])
    hb = F.make("sym2_lower", lambda xs: F._scale_nested(base.metric(xs), 0.6 * J.sin(xs[1])), 4)
    exact = -0.6 * np.sin(6.0) * bach_tensor(base, x)
    errs = [np.abs(linearized_bach(base, hb, x, step=s, richardson=False) - exact).max() for s in (0.2, 0.1, 0.05)]
    order = O.convergence_order(errs)
    rows.append(Row("geometry.bach.linearized_fd_order", "|observed order - 2| for DB_g(2 f g) finite differences",
                    "linearized Bach equation", float(np.abs(order - 2.0).max()), 0.2))
    h = F.random_trig_field("sym2_lower", 4, rng, kmax=0.5)
    lin = linearized_ricci(schw, h, pts[:3])
    rows.append(Row("geometry.linearized_ricci.fd_oracle", "jet linearized Ricci vs finite differences (relative)",
                    "linearized Ricci operator", _rel(linearized_ricci_fd(schw, h, pts[:3]), lin), 1e-6))
    return rows
