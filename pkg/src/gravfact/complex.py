"""Graded field complexes of linearized gravity and conformal gravity.

Sections are stored degree by degree as lazily evaluated fields.  The
differential Q and the Green's witness W return new sections whose
components are :class:`~gravfact.fields.DerivedField` objects, so operators
compose freely (QW, WWQ, QWG, ...) and are only evaluated at the points where
a check needs them.

Degree table (GR)::

    -1: X      vector field (ghost)
     0: h      symmetric (0,2) tensor
     1: hdag   symmetric (2,0) tensor (antifield)
     2: alpha  one-form (antighost)

The conformal model adds a scalar ``f`` in degree -1 and ``fdag`` in degree 2.

Normalization.  With ``E(h) = I(2 DRic_g(h))`` (on Ricci-flat g this is
``(-box + 2 Riem)(I h) + I L_{div(I h)} g``) the GR differentials are
``Q^-1 X = L_X g``, ``Q^0 h = E(h)^#``, ``Q^1 hdag = -2 (div hdag)_flat`` and
the witness is ``W^0 h = -div(I h)^#``, ``W^1 hdag = I(hdag_flat)``,
``W^2 alpha = (1/2) (I L_{alpha^#} g)^#``.  Then ``P = QW + WQ`` is ``-box`` on
vectors and one-forms and ``-box + 2 Riem`` on symmetric tensors.  The
variant ``"suppressed"`` drops every I; it is kept for sensitivity tests.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import fields as F
from . import geometry as G
from . import jets as J
from .errors import ClaimViolation, DimensionUnsupported, ModeUnsupported, QuadratureDivergence
from .reports import Row, max_row

MODEL_TABLE = {
    "gr": {-1: (("X", "vector"),), 0: (("h", "sym2_lower"),), 1: (("hdag", "sym2_upper"),),
           2: (("alpha", "covector"),)},
    "conformal": {-1: (("X", "vector"), ("f", "scalar")), 0: (("h", "sym2_lower"),),
                  1: (("hdag", "sym2_upper"),), 2: (("alpha", "covector"), ("fdag", "scalar"))},
}
VARIANTS = ("trace_reversed", "suppressed")
COMPONENT_DEGREE = {name: d for tab in MODEL_TABLE.values() for d, comps in tab.items() for name, _ in comps}


# -- supports ----------------------------------------------------------------

@dataclass(frozen=True)
class Support:
    """A closed coordinate box containing the support of a section.

    ``active[i]`` is False when the section does not depend on coordinate i
    (the box then spans the whole periodic direction).
    """

    lo: tuple
    hi: tuple
    active: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if self.active is None:
            object.__setattr__(self, "active", (True,) * len(self.lo))
        if any(h < l for l, h in zip(self.lo, self.hi)):
            raise ValueError("support box with hi < lo")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def time_interval(self) -> tuple:
        return self.lo[0], self.hi[0]

    def intersect(self, other: "Support | None") -> "Support | None":
        if other is None:
            return self
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(min(a, b) for a, b in zip(self.hi, other.hi))
        if any(h <= l for l, h in zip(lo, hi)):
            return None
        act = tuple(a or b for a, b in zip(self.active, other.active))
        return Support(lo, hi, act)

    def union(self, other: "Support | None") -> "Support | None":
        if other is None:
            return None
        lo = tuple(min(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(max(a, b) for a, b in zip(self.hi, other.hi))
        act = tuple(a or b for a, b in zip(self.active, other.active))
        return Support(lo, hi, act)

    def shifted(self, shift) -> "Support":
        s = np.asarray(shift, dtype=float)
        return Support(tuple(np.add(self.lo, s)), tuple(np.add(self.hi, s)), self.active)

    def contains(self, points, pad: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        ok = np.ones(p.shape[:-1], dtype=bool)
        for i in range(self.dim):
            if self.active[i]:
                ok &= (p[..., i] >= self.lo[i] - pad) & (p[..., i] <= self.hi[i] + pad)
        return ok


def box_support(center, halfwidths, st: G.Spacetime | None = None, active=None) -> Support:
    """Support of a box bump; inactive periodic directions span the full period."""
    c = np.asarray(center, dtype=float)
    w = np.asarray(halfwidths, dtype=float)
    lo, hi = c - w, c + w
    if active is not None and st is not None:
        for i, a in enumerate(active):
            if not a:
                lo[i], hi[i] = st.bounds[i]
    return Support(tuple(lo), tuple(hi), tuple(active) if active is not None else None)


# -- graded sections -------------------------------------------------------------

@dataclass(frozen=True)
class GradedSection:
    """Components keyed by name (``X``, ``h``, ``hdag``, ``alpha``, ``f``, ``fdag``)."""

    model: str
    dim: int
    parts: dict = field(default_factory=dict)
    support: Support | None = None

    def __post_init__(self):
        if self.model not in MODEL_TABLE:
            raise ValueError(f"unknown model {self.model!r}")
        kinds = {n: k for comps in MODEL_TABLE[self.model].values() for n, k in comps}
        for name, f in self.parts.items():
            if name not in kinds:
                raise ValueError(f"{name!r} is not a component of the {self.model} complex")
            if f.valence != F.KINDS[kinds[name]] or f.dim != self.dim:
                raise ValueError(f"component {name!r} has valence {f.valence}, expected {kinds[name]}")

    @property
    def degrees(self) -> list:
        return sorted({COMPONENT_DEGREE[n] for n in self.parts})

    def degree(self, d: int) -> dict:
        return {n: f for n, f in self.parts.items() if COMPONENT_DEGREE[n] == d}

    def only(self, d: int) -> "GradedSection":
        return replace(self, parts=self.degree(d))

    def __getitem__(self, name):
        return self.parts[name]

    def get(self, name):
        return self.parts.get(name)

    def values(self, points) -> dict:
        return {n: f.values(points) for n, f in self.parts.items()}

    def jets(self, points, order: int) -> dict:
        return {n: f.jets(points, order) for n, f in self.parts.items()}

    def combine(self, other: "GradedSection", c: float = 1.0) -> "GradedSection":
        if other.model != self.model or other.dim != self.dim:
            raise ValueError("sections of different complexes")
        parts = dict(self.parts)
        for n, f in other.parts.items():
            parts[n] = F.derived_combination([(1.0, parts[n]), (c, f)]) if n in parts else F.as_derived(f).scaled(c)
        sup = None if self.support is None or other.support is None else self.support.union(other.support)
        return GradedSection(self.model, self.dim, parts, sup)

    def __add__(self, other):
        return self.combine(other, 1.0)

    def __sub__(self, other):
        return self.combine(other, -1.0)

    def scaled(self, c: float) -> "GradedSection":
        return replace(self, parts={n: F.as_derived(f).scaled(c) for n, f in self.parts.items()})


def section(model: str, dim: int, support: Support | None = None, **parts) -> GradedSection:
    return GradedSection(model, dim, {k: v for k, v in parts.items() if v is not None}, support)


def zero_section(model: str, dim: int) -> GradedSection:
    return GradedSection(model, dim, {}, None)


# -- random sections -------------------------------------------------------------

def _active_polynomial(dim, active, degree, rng, center, scale):
    idx = [i for i in range(dim) if active[i]]
    p = F.random_polynomial(len(idx), degree, rng, np.asarray(center)[idx], scale)
    return lambda x: p([x[i] for i in idx])


def random_component(kind: str, dim: int, rng: np.random.Generator, center, degree: int = 2,
                     scale: float = 1.0, active=None) -> F.TensorField:
    """Random polynomial components in the active coordinates."""
    active = tuple(active) if active is not None else (True,) * dim
    rank = sum(F.KINDS[kind])
    sym = kind.startswith("sym2")
    polys = {}
    for idx in itertools.product(range(dim), repeat=rank):
        key = tuple(sorted(idx)) if sym else idx
        if key not in polys:
            polys[key] = _active_polynomial(dim, active, degree, rng, center, scale)

    def f(x):
        def build(prefix):
            if len(prefix) == rank:
                key = tuple(sorted(prefix)) if sym else tuple(prefix)
                return polys[key](x)
            return [build(prefix + [i]) for i in range(dim)]

        return build([])

    return F.make(kind, f, dim, f"random_{kind}")


def random_section(model: str, st: G.Spacetime, rng: np.random.Generator, degrees=(-1, 0, 1, 2),
                   center=None, halfwidths=None, degree: int = 2, power: int = 4, scale: float = 1.0,
                   active=None) -> GradedSection:
    """Random polynomial components; compactly supported when ``halfwidths`` is given."""
    dim = st.dim
    if center is None:
        center = st.sample_points(1, rng, margin=0.3)[0]
    center = np.asarray(center, dtype=float)
    act = tuple(active) if active is not None else (True,) * dim
    parts = {}
    env = None
    sup = None
    if halfwidths is not None:
        hw = np.where(act, np.asarray(halfwidths, dtype=float), np.inf)
        env = F.box_bump(center, hw, power)
        sup = box_support(center, halfwidths, st, act)
    for d in degrees:
        for name, kind in MODEL_TABLE[model][d]:
            comp = random_component(kind, dim, rng, center, degree, scale, act)
            parts[name] = F.enveloped(comp, env) if env is not None else comp
    return GradedSection(model, dim, parts, sup)


# -- operator plumbing ---------------------------------------------------------------

def _fit(out: J.JetArray, dim: int, order: int) -> J.JetArray:
    if out.valid < order:
        raise ValueError(f"operator output valid to order {out.valid}, {order} requested")
    if out.ctx.order > order:
        out = out.truncate(J.context(dim, order))
    return out


def _operator(st: G.Spacetime, inputs: tuple, extra: int, fn: Callable, kind: str, name: str) -> F.DerivedField:
    """A derived field computing ``fn(bg, *input_jets)`` with ``extra`` derivatives consumed."""

    def jets_fn(points, order):
        bg = G.Background(st, points, order + extra)
        args = [f.jets(bg.points, order + extra) for f in inputs]
        return _fit(fn(bg, *args), st.dim, order)

    return F.DerivedField(F.KINDS[kind], jets_fn, st.dim, name)


def _require_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")


def _require_gr_dim(st: G.Spacetime, variant: str) -> None:
    if variant == "trace_reversed" and st.dim != 4:
        raise DimensionUnsupported("the trace-reversed complex needs dimension 4")


def _I(bg, h, kinds="dd"):
    return G.trace_reverse(bg, h, kinds)


def einstein_operator(bg: G.Background, h: J.JetArray, variant: str = "trace_reversed") -> J.JetArray:
    """E(h) = I(2 DRic(h)) (or 2 DRic(h) with I suppressed)."""
    r2 = G.linearized_ricci_jets(bg, h, "full") * 2.0
    return _I(bg, r2) if variant == "trace_reversed" else r2


# -- Q -------------------------------------------------------------------------------

def apply_q(st: G.Spacetime, s: GradedSection, variant: str = "trace_reversed",
            bach_mode: str = "tt") -> GradedSection:
    """The differential, as a lazily evaluated section one degree up."""
    _require_variant(variant)
    if s.model == "gr":
        return _q_gr(st, s, variant)
    return _q_conformal(st, s, bach_mode)


def _q_gr(st, s, variant):
    parts = {}
    if "X" in s.parts:
        parts["h"] = _operator(st, (s["X"],), 1, lambda bg, X: G.lie_metric(bg, X), "sym2_lower", "Q(X)")
    if "h" in s.parts:
        _require_gr_dim(st, variant)
        parts["hdag"] = _operator(st, (s["h"],), 2,
                                  lambda bg, h: G.sharp2(bg, einstein_operator(bg, h, variant)),
                                  "sym2_upper", "Q(h)")
    if "hdag" in s.parts:
        parts["alpha"] = _operator(st, (s["hdag"],), 1,
                                   lambda bg, k: G.flat1(bg, G.div(bg, k, "uu")) * -2.0, "covector", "Q(hdag)")
    return GradedSection("gr", s.dim, parts, s.support)


def rho(bg: G.Background, X: J.JetArray, f: J.JetArray) -> J.JetArray:
    """Infinitesimal diffeomorphism plus Weyl rescaling: L_X g + 2 f g."""
    return G.lie_metric(bg, X) + J.einsum(",ab->ab", f, bg.g) * 2.0


def rho_dual(bg: G.Background, k: J.JetArray) -> tuple:
    """Formal adjoint pair (-2 div(k)_flat, 2 tr_g k) of rho on symmetric (2,0) tensors."""
    return G.flat1(bg, G.div(bg, k, "uu")) * -2.0, G.trace(bg, k, "uu") * 2.0


def _require_bach_mode(st, bach_mode):
    if bach_mode not in ("tt", "fd"):
        raise ModeUnsupported(f"unknown linearized Bach mode {bach_mode!r}")
    if st.dim != 4:
        raise DimensionUnsupported("the conformal complex is implemented in dimension 4")
    if bach_mode == "tt" and not (st.claims.conformally_flat and st.claims.einstein):
        raise ModeUnsupported("the closed-form linearized Bach operator needs a conformally flat Einstein background")


def _q_conformal(st, s, bach_mode):
    parts = {}
    if "X" in s.parts or "f" in s.parts:
        X = s.get("X") or F.zero("vector", s.dim)
        f = s.get("f") or F.zero("scalar", s.dim)
        parts["h"] = _operator(st, (X, f), 1, rho, "sym2_lower", "rho(X,f)")
    if "h" in s.parts:
        _require_bach_mode(st, bach_mode)
        parts["hdag"] = _bach_field(st, s["h"], bach_mode)
    if "hdag" in s.parts:
        parts["alpha"] = _operator(st, (s["hdag"],), 1, lambda bg, k: rho_dual(bg, k)[0], "covector", "rho*")
        parts["fdag"] = _operator(st, (s["hdag"],), 1, lambda bg, k: rho_dual(bg, k)[1], "scalar", "rho*")
    return GradedSection("conformal", s.dim, parts, s.support)


def _bach_field(st, h, mode):
    if mode == "tt":
        def fn(bg, hj):
            if np.abs(bg.riemann.value()).max() > 1e-12:
                raise ModeUnsupported("closed-form linearized Bach is implemented for flat backgrounds only")
            return G.sharp2(bg, G.box(bg, G.box(bg, hj, "dd"), "dd") * G.TT_BACH_FACTOR)

        return _operator(st, (h,), 4, fn, "sym2_upper", "DB(h)")

    def jets_fn(points, order):
        if order > 0:
            raise ModeUnsupported("the finite-difference Bach oracle returns values only")
        if not isinstance(h, F.TensorField):
            raise ModeUnsupported("the finite-difference Bach oracle needs an analytic field")
        pts = st.check_points(points)
        db = G.linearized_bach(st, h, pts, "fd")
        gi = np.linalg.inv(st.metric_values(pts))
        up = np.einsum("...ac,...bd,...cd->...ab", gi, gi, db)
        return J.const(up, J.context(st.dim, 0))

    return F.DerivedField(F.KINDS["sym2_upper"], jets_fn, st.dim, "DB_fd(h)")


# -- W and P ---------------------------------------------------------------------------

def apply_w(st: G.Spacetime, s: GradedSection, variant: str = "trace_reversed") -> GradedSection:
    """The Green's witness, one degree down (GR model only)."""
    _require_variant(variant)
    if s.model != "gr":
        raise ModeUnsupported("the Green's witness is implemented for the GR complex")
    tr = variant == "trace_reversed"
    if tr and st.dim != 4 and ("h" in s.parts or "hdag" in s.parts or "alpha" in s.parts):
        _require_gr_dim(st, variant)
    parts = {}
    if "h" in s.parts:
        def w0(bg, h):
            return G.sharp1(bg, G.div(bg, _I(bg, h) if tr else h, "dd")) * -1.0

        parts["X"] = _operator(st, (s["h"],), 1, w0, "vector", "W(h)")
    if "hdag" in s.parts:
        def w1(bg, k):
            kf = G.flat2(bg, k)
            return _I(bg, kf) if tr else kf

        parts["h"] = _operator(st, (s["hdag"],), 0, w1, "sym2_lower", "W(hdag)")
    if "alpha" in s.parts:
        def w2(bg, a):
            L = G.lie_metric(bg, G.sharp1(bg, a))
            return G.sharp2(bg, _I(bg, L) if tr else L) * 0.5

        parts["hdag"] = _operator(st, (s["alpha"],), 1, w2, "sym2_upper", "W(alpha)")
    return GradedSection("gr", s.dim, parts, s.support)


def apply_p(st: G.Spacetime, s: GradedSection, variant: str = "trace_reversed") -> GradedSection:
    """P = QW + WQ, degree preserving."""
    return apply_q(st, apply_w(st, s, variant), variant) + apply_w(st, apply_q(st, s, variant), variant)


def reference_p(st: G.Spacetime, s: GradedSection) -> GradedSection:
    """Independent assembly of the normally hyperbolic operators in each degree."""
    parts = {}
    if "X" in s.parts:
        parts["X"] = _operator(st, (s["X"],), 2, lambda bg, X: G.box(bg, X, "u") * -1.0, "vector", "-box X")
    if "h" in s.parts:
        parts["h"] = _operator(st, (s["h"],), 2, G.wave_operator, "sym2_lower", "wave(h)")
    if "hdag" in s.parts:
        parts["hdag"] = _operator(st, (s["hdag"],), 2,
                                  lambda bg, k: G.sharp2(bg, G.wave_operator(bg, G.flat2(bg, k))),
                                  "sym2_upper", "wave(hdag)")
    if "alpha" in s.parts:
        parts["alpha"] = _operator(st, (s["alpha"],), 2, lambda bg, a: G.box(bg, a, "d") * -1.0, "covector",
                                   "-box alpha")
    return GradedSection("gr", s.dim, parts, s.support)


def include_in_conformal(st: G.Spacetime, s: GradedSection) -> GradedSection:
    """Degreewise inclusion of the GR complex into the conformal one (zero scalars)."""
    if not (st.claims.conformally_flat and st.claims.einstein):
        raise ClaimViolation("the inclusion needs a conformally flat Einstein background")
    if s.model != "gr":
        raise ValueError("expected a GR section")
    return GradedSection("conformal", s.dim, dict(s.parts), s.support)


# -- pairing and quadrature ------------------------------------------------------------

@dataclass(frozen=True)
class PairingConvention:
    """<phi1, phi2> = sign * integral of the full contraction against vol_g.

    ``sign`` is +1 when the lower degree sits in the first slot and -1
    otherwise.  With this choice <Q a, b> + (-1)^|a| <a, Q b> = 0 and
    <W a, b> = (-1)^|a| <a, W b>.
    """

    rule: str = "lower_degree_first_positive"
    pairs: tuple = ((-1, 2), (0, 1))

    def sign(self, d1: int, d2: int) -> float:
        return 1.0 if d1 < d2 else -1.0


CONVENTION = PairingConvention()


def contraction(name1: str, v1: np.ndarray, name2: str, v2: np.ndarray) -> np.ndarray:
    """Full index contraction of two dual components (values with batch axes first)."""
    pair = {name1, name2}
    if pair == {"X", "alpha"}:
        return np.einsum("...a,...a->...", v1, v2)
    if pair == {"h", "hdag"}:
        return np.einsum("...ab,...ab->...", v1, v2)
    if pair == {"f", "fdag"}:
        return v1 * v2
    raise ValueError(f"{name1} and {name2} are not paired")


DUAL = {"X": "alpha", "alpha": "X", "h": "hdag", "hdag": "h", "f": "fdag", "fdag": "f"}


def quadrature_grid(box: Support, nodes: int, rule: str = "gauss"):
    """Tensor-product nodes and weights over a support box (one node on inactive axes)."""
    axes, wts = [], []
    for i in range(box.dim):
        lo, hi = box.lo[i], box.hi[i]
        if not box.active[i]:
            axes.append(np.array([0.5 * (lo + hi)]))
            wts.append(np.array([hi - lo]))
            continue
        if rule == "gauss":
            x, w = leggauss(nodes)
            axes.append(lo + (hi - lo) * (x + 1) / 2)
            wts.append(w * (hi - lo) / 2)
        elif rule == "trapezoid":
            x = np.linspace(lo, hi, nodes + 2)
            w = np.full(nodes + 2, (hi - lo) / (nodes + 1))
            w[0] = w[-1] = 0.5 * w[0]
            axes.append(x)
            wts.append(w)
        else:
            raise ValueError(f"unknown quadrature rule {rule!r}")
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.dim)
    w = np.ones(1)
    for wi in wts:
        w = np.multiply.outer(w, wi)
    return pts, w.reshape(-1)


def _interior(st: G.Spacetime, box: Support) -> Support:
    """Clip non-periodic axes to the open chart so quadrature nodes stay inside."""
    lo, hi = list(box.lo), list(box.hi)
    for i, (a, b) in enumerate(st.bounds):
        if not st.is_periodic(i):
            lo[i], hi[i] = max(lo[i], a), min(hi[i], b)
    return Support(lo, hi, box.active)


CHUNK = 2048


def integrate(st: G.Spacetime, integrand: Callable, box: Support, nodes: int, rule: str = "gauss") -> tuple:
    """(integral of integrand * sqrt|g|, integral of sqrt|g|, sup |integrand|) over ``box``."""
    pts, w = quadrature_grid(_interior(st, box), nodes, rule)
    keep = w != 0
    pts, w = pts[keep], w[keep]
    total, vol, sup = 0.0, 0.0, 0.0
    for k in range(0, len(pts), CHUNK):
        p, wk = pts[k:k + CHUNK], w[k:k + CHUNK]
        vg = np.sqrt(np.abs(np.linalg.det(st.metric_values(p))))
        val = integrand(p)
        total += float(np.sum(wk * vg * val))
        vol += float(np.sum(wk * vg))
        sup = max(sup, float(np.abs(val).max()))
    return total, vol, sup


@dataclass
class PairingResult:
    value: float
    error: float
    scale: float


def default_nodes(box: Support) -> int:
    n_active = sum(box.active)
    return 24 if n_active <= 2 else 8


def pairing_integrand(s1: GradedSection, s2: GradedSection, convention: PairingConvention = CONVENTION):
    terms = []
    for n1, f1 in s1.parts.items():
        n2 = DUAL[n1]
        if n2 in s2.parts:
            d1, d2 = COMPONENT_DEGREE[n1], COMPONENT_DEGREE[n2]
            terms.append((convention.sign(d1, d2), n1, f1, n2, s2.parts[n2]))
    return terms


def pairing_detail(st: G.Spacetime, s1: GradedSection, s2: GradedSection, nodes: int | None = None,
                   rule: str = "gauss", tol: float = 1e-8, check: bool = True,
                   convention: PairingConvention = CONVENTION) -> PairingResult:
    """The shifted pairing with an error estimate and the tolerance scale.

    The integration box is the intersection of the declared supports; at least
    one section must be compactly supported.
    """
    if s1.support is None and s2.support is None:
        raise ValueError("pairing needs at least one compactly supported section")
    box = s1.support.intersect(s2.support) if s1.support is not None else s2.support
    terms = pairing_integrand(s1, s2, convention)
    if box is None or not terms:
        return PairingResult(0.0, 0.0, 0.0)
    sups = {}

    def integrand(p):
        out = 0.0
        for sign, n1, f1, n2, f2 in terms:
            v1, v2 = f1.values(p), f2.values(p)
            sups[n1] = max(sups.get(n1, 0.0), float(np.abs(v1).max()))
            sups[n2 + "'"] = max(sups.get(n2 + "'", 0.0), float(np.abs(v2).max()))
            out = out + sign * contraction(n1, v1, n2, v2)
        return out

    n = nodes or default_nodes(box)
    err = 0.0
    if check:
        # the finer of two neighbouring rules is returned; their gap is the error estimate
        coarse, _, _ = integrate(st, integrand, box, n, rule)
        value, vol, _ = integrate(st, integrand, box, n + 1, rule)
        err = abs(value - coarse)
    else:
        value, vol, _ = integrate(st, integrand, box, n, rule)
    scale = vol * max(sups.get(n1, 0.0) * sups.get(DUAL[n1] + "'", 0.0) for _, n1, *_ in terms)
    if check:
        if err > tol * max(scale, 1e-300) and err > 1e-14:
            raise QuadratureDivergence(f"pairing quadrature error estimate {err:.2e} exceeds {tol:g} x scale {scale:.2e}")
    return PairingResult(value, err, scale)


def pairing(st: G.Spacetime, s1: GradedSection, s2: GradedSection, **kw) -> float:
    return pairing_detail(st, s1, s2, **kw).value


# -- BV action ---------------------------------------------------------------------------

def graded_bracket(bg: G.Background, X1: J.JetArray, X2: J.JetArray) -> J.JetArray:
    """Bracket of two odd (ghost) vector fields, nabla_{X1} X2 + nabla_{X2} X1."""
    D1, D2 = G.cov(bg, X1, "u"), G.cov(bg, X2, "u")
    return J.einsum("b,ab->a", X1, D2) + J.einsum("b,ab->a", X2, D1)


def bv_action_terms(st: G.Spacetime, h, hdag, X, X1, X2, antighost, support: Support,
                    h2=None, nodes: int | None = None, rule: str = "gauss", tol: float = 1e-8,
                    variant: str = "trace_reversed") -> dict:
    """Multilinear pieces of the BV action, each integrated over ``support``.

    ``quadratic`` is the bilinear form int (h, E(h2)) vol with h2 = h by
    default (``quadratic_swapped`` exchanges the slots), ``mixing`` is
    int (hdag, L_X g) vol and ``ghost`` is int (antighost, [X1, X2]) vol with
    the odd bracket, so that ghost(X, X) = 2 * ghost_word(X).
    """
    h2 = h2 if h2 is not None else h
    n = nodes or default_nodes(support)

    def quad(fn):
        coarse = integrate(st, fn, support, n, rule)[0]
        val, vol, sup = integrate(st, fn, support, n + 1, rule)
        scale = vol * max(sup, 1e-300)
        if abs(val - coarse) > tol * scale and abs(val - coarse) > 1e-14:
            raise QuadratureDivergence(f"BV action quadrature error {abs(val - coarse):.2e}")
        return val

    def E_of(f):
        return _operator(st, (f,), 2, lambda bg, hj: einstein_operator(bg, hj, variant), "sym2_lower", "E")

    Eh2, Eh = E_of(h2), E_of(h)
    gi = lambda p: np.linalg.inv(st.metric_values(p))

    def dd(a, b, p):
        g = gi(p)
        return np.einsum("...ac,...bd,...ab,...cd->...", g, g, a, b)

    out = {
        "quadratic": quad(lambda p: dd(h.values(p), Eh2.values(p), p)),
        "quadratic_swapped": quad(lambda p: dd(h2.values(p), Eh.values(p), p)),
    }
    LX = _operator(st, (X,), 1, lambda bg, x: G.lie_metric(bg, x), "sym2_lower", "L_X g")
    out["mixing"] = quad(lambda p: np.einsum("...ab,...ab->...", hdag.values(p), LX.values(p)))
    br = _operator(st, (X1, X2), 1, graded_bracket, "vector", "[X1,X2]")
    word = _operator(st, (X1,), 1, lambda bg, x: J.einsum("b,ab->a", x, G.cov(bg, x, "u")), "vector", "X.X")
    out["ghost"] = quad(lambda p: np.einsum("...a,...a->...", antighost.values(p), br.values(p)))
    out["ghost_word"] = quad(lambda p: np.einsum("...a,...a->...", antighost.values(p), word.values(p)))
    return out


# -- verification ----------------------------------------------------------------------

ANCHORS = {
    "q_squared": "the differential squares to zero in every degree",
    "qww": "QWW agrees with WWQ in every degree",
    "w_selfadjoint": "the witness is formally self-adjoint for the shifted pairing",
    "p_identification": "QW + WQ is the normally hyperbolic operator of each degree",
    "pairing_compat": "the shifted pairing is compatible with the differential",
    "chain_map": "the inclusion of GR into conformal gravity commutes with the differentials",
    "rho_dual": "the formal adjoint of rho is (-2 div flat, 2 tr)",
    "ker_bach": "the image of rho lies in the kernel of the linearized Bach operator",
    "rho": "the conformal differential in degree -1 is L_X g + 2 f g",
    "q_squared_control": "Q squared is obstructed by L_X Ric off Ricci-flat backgrounds",
}


def jet_norm(f, points, order: int) -> float:
    return float(np.abs(f.jets(points, order).data).max())


def _section_max(s: GradedSection, points, order: int = 0) -> float:
    if not s.parts:
        return 0.0
    return max(jet_norm(f, points, order) for f in s.parts.values())


def _diff_max(a: GradedSection, b: GradedSection, points) -> float:
    names = set(a.parts) | set(b.parts)
    worst = 0.0
    for n in names:
        va = a.parts[n].values(points) if n in a.parts else 0.0
        vb = b.parts[n].values(points) if n in b.parts else 0.0
        worst = max(worst, float(np.abs(np.asarray(va) - np.asarray(vb)).max()))
    return worst


def sample_points_for(st: G.Spacetime, n: int, rng: np.random.Generator) -> np.ndarray:
    if st.chart == "spherical_static":
        lo, hi = st.bounds[1]
        m = st.params.get("mass")
        r0, r1 = (4.0 * m, 10.0 * m) if m else (lo + 0.25 * (hi - lo), lo + 0.6 * (hi - lo))
        pts = np.empty((n, 4))
        pts[:, 0] = rng.uniform(-1, 1, n)
        pts[:, 1] = rng.uniform(r0, r1, n)
        pts[:, 2] = rng.uniform(0.6, 2.5, n)
        pts[:, 3] = rng.uniform(-2.0, 2.0, n)
        return pts
    return st.sample_points(n, rng, margin=0.3)


def compact_box_for(st: G.Spacetime, rng: np.random.Generator):
    """A random centre and box half-widths well inside the chart."""
    c = sample_points_for(st, 1, rng)[0]
    if st.chart == "spherical_static":
        hw = np.array([0.3, 0.3, 0.2, 0.3])
    else:
        hw = np.full(st.dim, 0.6)
    return c, hw


ALL_CHECKS = ("q_squared", "qww", "p_identification", "w_selfadjoint", "pairing_compat")


def verify_complex(model: str, st: G.Spacetime, trials: int = 5, seed: int = 0, tol: float | None = None,
                   points: int = 4, pairing_trials: int | None = None, compat_trials: int | None = None,
                   variant: str = "trace_reversed", prefix: str = "complex", power: int = 3,
                   checks=ALL_CHECKS) -> list:
    """Identity rows for the GR (or conformal) complex on ``st``.

    Pointwise identities use random polynomial sections at ``points`` random
    points per trial; pairing identities use compactly supported sections.
    ``checks`` selects a subset of :data:`ALL_CHECKS`.
    """
    rng = np.random.default_rng(seed)
    tol = tol if tol is not None else (1e-8 if st.chart != "spherical_static" else 1e-7)
    ptrials = trials if pairing_trials is None else pairing_trials
    ctrials = min(ptrials, 3) if compat_trials is None else compat_trials
    tag = st.name
    if model == "conformal":
        return _verify_conformal(st, trials, rng, tol, points, prefix, tag)
    res = {k: [] for k in ("q0", "q-1", "qww0", "qww1", "qww2", "p-1", "p0", "p1", "p2", "w02", "w11", "w20",
                           "c-11", "c00", "c1-1")}
    Q = lambda s: apply_q(st, s, variant)
    W = lambda s: apply_w(st, s, variant)
    for _ in range(trials):
        pts = sample_points_for(st, points, rng)
        c = pts.mean(axis=0)
        s = random_section("gr", st, rng, center=c, degree=3)
        for d, key in ((-1, "q-1"), (0, "q0")):
            if "q_squared" not in checks:
                break
            sd = s.only(d)
            mid = Q(sd)
            res[key].append(_section_max(Q(mid), pts) / max(_section_max(mid, pts, 2), 1e-300))
        for d in (0, 1, 2) if "qww" in checks else ():
            sd = s.only(d)
            lhs, rhs = Q(W(W(sd))), W(W(Q(sd)))
            scale = max(_section_max(sd, pts, 3), 1e-300)
            res[f"qww{d}"].append(_diff_max(lhs, rhs, pts) / scale)
        for d in (-1, 0, 1, 2) if "p_identification" in checks else ():
            sd = s.only(d)
            scale = max(_section_max(sd, pts, 2), 1e-300)
            res[f"p{d}"].append(_diff_max(apply_p(st, sd, variant), reference_p(st, sd), pts) / scale)
    if "w_selfadjoint" not in checks:
        ptrials = ctrials if "pairing_compat" in checks else 0
    for trial in range(ptrials):
        c, hw = compact_box_for(st, rng)
        s1 = random_section("gr", st, rng, center=c, halfwidths=hw, degree=1, power=power)
        c2 = c + rng.uniform(-0.3, 0.3, st.dim) * hw
        s2 = random_section("gr", st, rng, center=c2, halfwidths=hw, degree=1, power=power)
        for d1, d2 in ((0, 2), (1, 1), (2, 0)) if "w_selfadjoint" in checks else ():
            a, b = s1.only(d1), s2.only(d2)
            l = pairing_detail(st, W(a), b)
            r = pairing_detail(st, a, W(b))
            sc = max(l.scale, r.scale, 1e-300)
            res[f"w{d1}{d2}"].append(abs(l.value - (-1) ** d1 * r.value) / sc)
        if trial >= ctrials or "pairing_compat" not in checks:
            continue
        for d1, d2 in ((-1, 1), (0, 0), (1, -1)):
            a, b = s1.only(d1), s2.only(d2)
            l = pairing_detail(st, Q(a), b)
            r = pairing_detail(st, a, Q(b))
            sc = max(l.scale, r.scale, 1e-300)
            res[f"c{d1}{d2}"].append(abs(l.value + (-1) ** d1 * r.value) / sc)
    rows = [
        max_row(f"{prefix}.q_squared.deg-1.{tag}", "Q0 Q-1 X relative to |L_X g| jets", ANCHORS["q_squared"], res["q-1"], tol),
        max_row(f"{prefix}.q_squared.deg0.{tag}", "Q1 Q0 h relative to |Q0 h| jets", ANCHORS["q_squared"], res["q0"], tol),
    ]
    for d in (0, 1, 2):
        rows.append(max_row(f"{prefix}.qww.deg{d}.{tag}", f"QWW - WWQ on degree {d}", ANCHORS["qww"], res[f"qww{d}"], tol))
    for d in (-1, 0, 1, 2):
        rows.append(max_row(f"{prefix}.p_identification.deg{d}.{tag}", f"QW + WQ vs independent assembly, degree {d}",
                            ANCHORS["p_identification"], res[f"p{d}"], tol))
    for d1, d2 in ((0, 2), (1, 1), (2, 0)):
        rows.append(max_row(f"{prefix}.w_selfadjoint.deg{d1}{d2}.{tag}", f"<W a,b> - (-1)^|a| <a,W b>, degrees {d1},{d2}",
                            ANCHORS["w_selfadjoint"], res[f"w{d1}{d2}"], tol))
    for d1, d2 in ((-1, 1), (0, 0), (1, -1)):
        rows.append(max_row(f"{prefix}.pairing_compat.deg{d1}{d2}.{tag}", f"<Q a,b> + (-1)^|a| <a,Q b>, degrees {d1},{d2}",
                            ANCHORS["pairing_compat"], res[f"c{d1}{d2}"], tol))
    keys = {"q_squared": "q_squared", "qww": "qww", "p_identification": "p_identification",
            "w_selfadjoint": "w_selfadjoint", "pairing_compat": "pairing_compat"}
    return [r for r in rows if any(f".{keys[c]}." in r.id for c in checks)]


def trig_gauge_direction(st: G.Spacetime, rng: np.random.Generator, terms: int = 2, kmax: float = 1.2,
                         with_scalar: bool = True) -> tuple:
    """Random trigonometric (X, f) on a flat chart with h = L_X eta + 2 f eta in closed form.

    Returns analytic :class:`~gravfact.fields.TensorField` objects, so the
    finite-difference Bach oracle (which perturbs the metric) can use ``h``.
    """
    dim = st.dim
    eta = np.diag([-1.0] + [1.0] * (dim - 1))
    A = rng.normal(size=(terms, dim))
    B = rng.normal(size=terms) if with_scalar else np.zeros(terms)
    K = rng.uniform(-kmax, kmax, size=(terms, dim))
    ph = rng.uniform(0, 2 * np.pi, size=terms)

    def args(x):
        return [ph[j] + sum(K[j, i] * x[i] for i in range(dim)) for j in range(terms)]

    def X(x):
        a = args(x)
        return [sum(A[j, c] * J.sin(a[j]) for j in range(terms)) for c in range(dim)]

    def f(x):
        a = args(x)
        return sum(B[j] * J.sin(a[j]) for j in range(terms))

    def h(x):
        a = args(x)
        cs = [J.cos(v) for v in a]
        # d_a X^c = sum_j A_jc K_ja cos
        dX = [[sum(A[j, c] * K[j, b] * cs[j] for j in range(terms)) for c in range(dim)] for b in range(dim)]
        fx = f(x)
        return [[eta[b, b] * dX[a_][b] + eta[a_, a_] * dX[b][a_] + 2.0 * fx * eta[a_, b] for b in range(dim)]
                for a_ in range(dim)]

    return F.make("vector", X, dim, "X"), F.make("scalar", f, dim, "f"), F.make("sym2_lower", h, dim, "rho(X,f)")


def traceless_upper(st: G.Spacetime, k) -> F.DerivedField:
    """k - (tr_g k / dim) g^{-1} for a symmetric (2,0) field."""
    def fn(bg, kj):
        return kj - J.einsum(",ab->ab", G.trace(bg, kj, "uu"), bg.ginv) * (1.0 / st.dim)

    return _operator(st, (k,), 0, fn, "sym2_upper", "traceless")


def _verify_conformal(st, trials, rng, tol, points, prefix, tag):
    """Conformal rows: the rho-dual identity, im rho in ker DB, and the restricted chain map."""
    if not (st.claims.conformally_flat and st.claims.einstein):
        raise ModeUnsupported("conformal verification runs in the conformally flat Einstein mode")
    res = {"dual": [], "ker": [], "chain": [], "rho": []}
    for _ in range(trials):
        c, hw = compact_box_for(st, rng)
        a = random_section("conformal", st, rng, degrees=(-1,), center=c, halfwidths=hw, degree=1, power=3)
        b = random_section("conformal", st, rng, degrees=(1,), center=c + 0.2 * hw, halfwidths=hw, degree=1, power=3)
        l = pairing_detail(st, apply_q(st, a), b)
        r = pairing_detail(st, a, apply_q(st, b))
        res["dual"].append(abs(l.value - r.value) / max(l.scale, r.scale, 1e-300))
        pts = sample_points_for(st, points, rng)
        X, f, h = trig_gauge_direction(st, rng)
        rho_h = apply_q(st, section("conformal", st.dim, X=X, f=f))["h"].values(pts)
        res["rho"].append(float(np.abs(rho_h - h.values(pts)).max()) / max(jet_norm(h, pts, 0), 1e-300))
        db = apply_q(st, section("conformal", st.dim, h=h), bach_mode="fd")["hdag"].values(pts)
        res["ker"].append(float(np.abs(db).max()) / max(jet_norm(h, pts, 4), 1e-300))
        g = random_section("gr", st, rng, degrees=(-1, 1), center=pts.mean(axis=0), degree=3)
        g = section("gr", st.dim, X=g["X"], hdag=traceless_upper(st, g["hdag"]))
        lhs = apply_q(st, include_in_conformal(st, g))
        rhs = include_in_conformal(st, apply_q(st, g))
        res["chain"].append(_diff_max(lhs, rhs, pts) / max(_section_max(g, pts, 1), 1e-300))
    return [
        max_row(f"{prefix}.conformal.rho_dual.{tag}", "<rho a, b> vs <a, rho* b>", ANCHORS["rho_dual"], res["dual"], tol),
        max_row(f"{prefix}.conformal.rho_closed_form.{tag}", "Q on (X, f) vs L_X g + 2 f g in closed form",
                ANCHORS["rho"], res["rho"], tol),
        max_row(f"{prefix}.conformal.ker_bach.{tag}", "finite-difference DB(L_X g + 2 f g) relative to input jets",
                ANCHORS["ker_bach"], res["ker"], max(tol, 1e-6)),
        max_row(f"{prefix}.conformal.chain_map.{tag}", "Q incl - incl Q on ghosts and traceless antifields",
                ANCHORS["chain_map"], res["chain"], tol),
    ]


def lie_ricci_fd(st: G.Spacetime, X: F.TensorField, points, step: float = 1e-3) -> np.ndarray:
    """(L_X Ric)_ab from Ricci values and central differences of them."""
    pts = np.asarray(points, dtype=float)
    Ric = G.ricci_values(st, pts)
    dRic = np.stack([G.central_difference(lambda t, k=k: G.ricci_values(st, pts + t * np.eye(st.dim)[k]), step)
                     for k in range(st.dim)], axis=-1)
    Xj = X.jets(pts, 1)
    Xv, dX = Xj.value(), J.derivative_tensor(Xj, 1)
    return (np.einsum("...c,...abc->...ab", Xv, dRic) + np.einsum("...cb,...ca->...ab", Ric, dX)
            + np.einsum("...ac,...cb->...ab", Ric, dX))


def q_squared_obstruction(st: G.Spacetime, X: F.TensorField, points, variant: str = "trace_reversed") -> dict:
    """Compare Q^0 Q^-1 X with the predicted obstruction (2 I L_X Ric)^# computed by finite differences."""
    pts = np.asarray(points, dtype=float)
    s = section("gr", st.dim, X=X)
    qq = apply_q(st, apply_q(st, s, variant), variant)["hdag"].values(pts)
    L = lie_ricci_fd(st, X, pts)
    g = st.metric_values(pts)
    gi = np.linalg.inv(g)
    if variant == "trace_reversed":
        tr = np.einsum("...ab,...ab->...", gi, L)
        L = L - 0.5 * tr[..., None, None] * g
    pred = 2.0 * np.einsum("...ac,...bd,...cd->...ab", gi, gi, L)
    mag = float(np.abs(qq).max())
    return {"residual": mag, "prediction_error": float(np.abs(qq - pred).max()) / max(mag, 1e-300),
            "obstruction": qq, "predicted": pred}
