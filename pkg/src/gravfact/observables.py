"""Classical observables as finite polynomial words in compactly supported sections.

A linear observable is a compact graded section regarded as a functional on
configurations through the natural contraction integral.  Polynomial
observables are signed words of such factors in the graded symmetric algebra
with the shifted grading |x| = deg(x) - 1.  Words never get closed up into
function spaces: they are compared symbolically and evaluated against
configurations by quadrature.

Pushforward along a translation-inclusion is extension by zero.  Factors keep
a symbolic key ``(label, number of Q applications, accumulated shift)`` with
exact ``Fraction`` shifts, so composition laws are checked by word equality.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import causal as CA
from . import complex as C
from . import fields as F
from . import geometry as G
from . import green as GR
from .errors import NotCauchy, NotTimeOrderable, OverlappingImages, SupportEscapesImage, UnsupportedBackground
from .reports import Row

TAU_KINDS = ("shiftedMinus1", "unshifted0", "dirac")
X1_ONLY = (True, True, False, False)


@dataclass(frozen=True)
class NaturalPairing(C.PairingConvention):
    """Unsigned contraction integral, used inside the propagator pairings."""

    rule: str = "natural"

    def sign(self, d1: int, d2: int) -> float:
        return 1.0


PLAIN = NaturalPairing()


# -- Poisson pairings --------------------------------------------------------------------

def _st(g):
    return g.st if isinstance(g, GR.GreenOperator) else g


def homogeneous_degree(s: C.GradedSection) -> int:
    degs = s.degrees
    if len(degs) != 1:
        raise ValueError(f"expected a homogeneous section, got degrees {degs}")
    return degs[0]


def tau_detail(kind: str, g, s1: C.GradedSection, s2: C.GradedSection, nodes: int = 48) -> C.PairingResult:
    """The pairings tau_{-1}, tau_0 and tau_D.

    tau_{-1} is the shifted pairing itself.  tau_0 and tau_D contract s1
    against W G s2 and W G_D s2; ``g`` must then be a Green operator handle.
    """
    if kind == "shiftedMinus1":
        return C.pairing_detail(_st(g), s1, s2, nodes=nodes)
    if kind not in TAU_KINDS:
        raise ValueError(f"unknown pairing kind {kind!r}")
    if not isinstance(g, GR.GreenOperator):
        raise TypeError("tau_0 and tau_D need a GreenOperator")
    prop = GR.propagators(g, s2)["G" if kind == "unshifted0" else "G_D"]
    return C.pairing_detail(g.st, s1, C.apply_w(g.st, prop), nodes=nodes, convention=PLAIN)


def tau(kind: str, g, s1: C.GradedSection, s2: C.GradedSection, nodes: int = 48) -> float:
    return tau_detail(kind, g, s1, s2, nodes).value


def d_tau_dirac(op: GR.GreenOperator, s1: C.GradedSection, s2: C.GradedSection, nodes: int = 48) -> tuple:
    """(boundary of tau_D at (s1, s2), tau_{-1}(s1, s2), scale).

    The boundary is tau_D(Q s1, s2) + tau_D(s1, Q s2) multiplied by the
    ordering sign of the shifted pairing, so that it is compared with tau_{-1}
    in the same sign convention.
    """
    st = op.st
    d1, d2 = homogeneous_degree(s1), homogeneous_degree(s2)
    total, scale = 0.0, 0.0
    if d1 < 2:
        r = tau_detail("dirac", op, C.apply_q(st, s1), s2, nodes)
        total += r.value
        scale = max(scale, r.scale)
    if d2 < 2:
        r = tau_detail("dirac", op, s1, C.apply_q(st, s2), nodes)
        total += r.value
        scale = max(scale, r.scale)
    ref = tau_detail("shiftedMinus1", st, s1, s2, nodes)
    return C.CONVENTION.sign(d1, d2) * total, ref.value, max(scale, ref.scale)


# -- diamond-supported sections -----------------------------------------------------------

def diamond_envelope(tc: float, xc: float, r: float, power: int = 20):
    """Product of bumps in the two null coordinates of the (t, x^1) diamond."""

    def env(x):
        u = (x[0] - x[1] - (tc - xc)) * (1.0 / r)
        v = (x[0] + x[1] - (tc + xc)) * (1.0 / r)
        return F.bump(u, power) * F.bump(v, power)

    return env


def diamond_section(st: G.Spacetime, rng: np.random.Generator, tc: float, xc: float, r: float, degrees,
                    model: str = "gr", power: int = 20, poly_degree: int = 1) -> C.GradedSection:
    """Random section supported in the (t, x^1) diamond of half-height r, constant along x^2, x^3."""
    env = diamond_envelope(tc, xc, r, power)
    act = X1_ONLY[:st.dim] if st.dim == 4 else (True,) * st.dim
    center = [tc, xc] + [0.0] * (st.dim - 2)
    parts = {}
    for d in degrees:
        for name, kind in C.MODEL_TABLE[model][d]:
            comp = C.random_component(kind, st.dim, rng, center, poly_degree, 1.0, act)
            # periodic coordinates are read on the copy around the centre
            parts[name] = shifted_field(F.enveloped(comp, env), [0.0] * st.dim, st, center)
    lo = [tc - r, xc - r] + [st.bounds[i][0] for i in range(2, st.dim)]
    hi = [tc + r, xc + r] + [st.bounds[i][1] for i in range(2, st.dim)]
    return C.GradedSection(model, st.dim, parts, C.Support(lo, hi, act))


def reduced_diamond(st2: G.Spacetime, tc: float, xc: float, r: float) -> CA.CausalRegion:
    """The (t, x^1) diamond as a region of the 1+1 slab carrying the causal decision."""
    return CA.region(st2, CA.Diamond((tc - r, xc), (tc + r, xc)))


def inscribed_box_section(st: G.Spacetime, rng: np.random.Generator, d: CA.Diamond, degrees,
                          model: str = "gr", power: int = 3, poly_degree: int = 1) -> C.GradedSection:
    """Random section with compact support in a coordinate box inside the diamond ``d``.

    The low default power keeps products with polynomial configurations
    polynomial on the box, so modest Gauss rules integrate them exactly.
    """
    c = 0.5 * (np.array(d.p) + np.array(d.q))
    r = 0.5 * (d.q[0] - d.p[0])
    a = 0.95 * r / (1 + math.sqrt(st.dim - 1))
    hw = np.full(st.dim, a)
    env = F.box_bump(c, hw, power)
    parts = {}
    for deg in degrees:
        for name, kind in C.MODEL_TABLE[model][deg]:
            parts[name] = F.enveloped(C.random_component(kind, st.dim, rng, c, poly_degree), env)
    return C.GradedSection(model, st.dim, parts, C.box_support(c, hw))


# -- morphisms -----------------------------------------------------------------------------

@dataclass(frozen=True)
class Embedding:
    """Translation by ``shift`` followed by inclusion.

    Source and target are spacetimes or regions of the same flat slab.  A
    :class:`gravfact.causal.LocMorphism` converts with :func:`as_embedding`.
    """

    source: object
    target: object
    shift: tuple

    @property
    def target_st(self) -> G.Spacetime:
        return self.target.st if isinstance(self.target, CA.CausalRegion) else self.target

    @property
    def is_identity(self) -> bool:
        return self.source is self.target and all(s == 0 for s in self.shift)


def _fractions(shift, dim):
    return tuple(s if isinstance(s, Fraction) else Fraction(s).limit_denominator(10**12) for s in
                 (shift if shift is not None else [0] * dim))


def _diamond_inside(st, d: CA.Diamond, big: CA.Diamond) -> bool:
    return bool(CA.relation(st, big.p, d.p).causal and CA.relation(st, d.q, big.q).causal)


def embedding(source, target, shift=None, n_check: int = 200, seed: int = 0) -> Embedding:
    """Validate that the translated source lies inside the target."""
    st = target.st if isinstance(target, CA.CausalRegion) else target
    sh = _fractions(shift, st.dim)
    if isinstance(source, CA.CausalRegion) and isinstance(target, CA.CausalRegion):
        moved = source.translate([float(s) for s in sh])
        if moved.is_diamond_union and target.is_diamond_union:
            ok = all(any(_diamond_inside(st, d, big) for big in target.primitives) for d in moved.primitives)
        else:
            pts = moved.sample(n_check, np.random.default_rng(seed))
            ok = bool(target.contains(pts).all())
        if not ok:
            raise SupportEscapesImage("translated source region is not inside the target")
    return Embedding(source, target, sh)


def identity(region) -> Embedding:
    dim = region.st.dim if isinstance(region, CA.CausalRegion) else region.dim
    return Embedding(region, region, tuple(Fraction(0) for _ in range(dim)))


def as_embedding(f) -> Embedding:
    if isinstance(f, Embedding):
        return f
    if isinstance(f, CA.LocMorphism):
        return Embedding(f.source, f.target, tuple(f.shift))
    raise TypeError(f"not a morphism: {f!r}")


def compose(f, g) -> Embedding:
    """g after f."""
    f, g = as_embedding(f), as_embedding(g)
    if f.target != g.source:
        raise ValueError("morphisms are not composable")
    return Embedding(f.source, g.target, tuple(a + b for a, b in zip(f.shift, g.shift)))


# -- pushforward of sections ------------------------------------------------------------------

def _wrap(st: G.Spacetime, pts: np.ndarray, center) -> np.ndarray:
    """Move periodic coordinates to the copy nearest ``center``."""
    out = np.array(pts, dtype=float)
    for i in range(1, st.dim):
        if st.is_periodic(i):
            L = st.periods[i]
            out[..., i] = center[i] + np.mod(out[..., i] - center[i] + 0.5 * L, L) - 0.5 * L
    return out


def shifted_field(f, shift, st: G.Spacetime, center) -> F.DerivedField:
    """x -> f(x - shift), read on the periodic copy around ``center`` (source coordinates)."""
    s = np.array([float(v) for v in shift])
    c = np.asarray(center, dtype=float)

    def jets_fn(points, order):
        return f.jets(_wrap(st, np.asarray(points) - s, c), order)

    return F.DerivedField(f.valence, jets_fn, f.dim, (f.name or "f") + "@shift")


def push_section(f, s: C.GradedSection) -> C.GradedSection:
    """Extension by zero along a translation-inclusion."""
    f = as_embedding(f)
    if f.is_identity or all(v == 0 for v in f.shift):
        return s
    if s.support is None:
        raise SupportEscapesImage("only compactly supported sections can be pushed forward")
    st = f.target_st
    c = 0.5 * (np.array(s.support.lo) + np.array(s.support.hi))
    parts = {n: shifted_field(p, f.shift, st, c) for n, p in s.parts.items()}
    return C.GradedSection(s.model, s.dim, parts, s.support.shifted([float(v) for v in f.shift]))


def pull_section(f, u: C.GradedSection) -> C.GradedSection:
    """f^* u = u(x + shift) on the source."""
    f = as_embedding(f)
    s = np.array([float(v) for v in f.shift])

    def pulled(p):
        return F.DerivedField(p.valence, lambda pts, order: p.jets(np.asarray(pts) + s, order), p.dim, p.name)

    sup = None if u.support is None else u.support.shifted(-s)
    return C.GradedSection(u.model, u.dim, {n: pulled(p) for n, p in u.parts.items()}, sup)


# -- observables ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class Factor:
    """A linear factor: a homogeneous compact section with its symbolic key."""

    label: str
    shift: tuple
    nq: int
    degree: int
    section: C.GradedSection
    st: G.Spacetime

    @property
    def key(self) -> tuple:
        return (self.label, self.nq, self.shift)

    @property
    def odd(self) -> bool:
        return (self.degree - 1) % 2 == 1


@dataclass(frozen=True)
class Observable:
    """Sum of coeff * x_1 ... x_k over canonically ordered words."""

    st: G.Spacetime
    words: tuple = ()
    max_degree: int = 3
    region: object = None

    @property
    def degree(self) -> int:
        return max((len(f) for _, f in self.words), default=0)

    def word_map(self) -> dict:
        return {tuple(x.key for x in fs): c for c, fs in self.words}

    def same_words(self, other: "Observable", tol: float = 0.0) -> bool:
        a, b = self.word_map(), other.word_map()
        if set(a) != set(b):
            return False
        return all(abs(a[k] - b[k]) <= tol * max(abs(a[k]), abs(b[k]), 1e-300) for k in a)

    def __mul__(self, other: "Observable") -> "Observable":
        return product([self, other])

    def __add__(self, other: "Observable") -> "Observable":
        return make_observable(self.st, self.words + other.words, max(self.max_degree, other.max_degree))

    def scaled(self, c: float) -> "Observable":
        return make_observable(self.st, tuple((c * w, fs) for w, fs in self.words), self.max_degree, self.region)


def _canonical(coeff: float, factors: tuple):
    """Sort factors by key, tracking the Koszul sign; None when an odd factor repeats."""
    fs = list(factors)
    sign = 1.0
    # insertion sort so that every transposition is accounted for
    for i in range(1, len(fs)):
        j = i
        while j > 0 and fs[j - 1].key > fs[j].key:
            if fs[j - 1].odd and fs[j].odd:
                sign = -sign
            fs[j - 1], fs[j] = fs[j], fs[j - 1]
            j -= 1
    for a, b in zip(fs, fs[1:]):
        if a.key == b.key and a.odd:
            return None
    return sign * coeff, tuple(fs)


def make_observable(st: G.Spacetime, words, max_degree: int = 3, region=None) -> Observable:
    """Canonicalise, merge equal words and prune exact zeros."""
    merged: dict = {}
    reps: dict = {}
    for c, fs in words:
        if len(fs) > max_degree:
            raise ValueError(f"word of degree {len(fs)} exceeds the bound {max_degree}")
        can = _canonical(float(c), tuple(fs))
        if can is None:
            continue
        c2, fs2 = can
        k = tuple(x.key for x in fs2)
        merged[k] = merged.get(k, 0.0) + c2
        reps.setdefault(k, fs2)
    out = tuple((merged[k], reps[k]) for k in sorted(merged, key=_sort_key) if merged[k] != 0.0)
    return Observable(st, out, max_degree, region)


def _sort_key(k):
    return (len(k), k)


def _support_in_region(s: C.GradedSection, region: CA.CausalRegion) -> bool:
    sup = s.support
    if sup is None or not all(sup.active) or region.dim != s.dim:
        return True
    lo, hi = np.array(sup.lo), np.array(sup.hi)
    c = 0.5 * (lo + hi)
    corners = np.array([[h if b else l for l, h, b in zip(lo, hi, bits)]
                        for bits in itertools.product((0, 1), repeat=s.dim)])
    corners = c + (1 - 1e-9) * (corners - c)
    return bool(region.contains(corners).all())


def linear(st: G.Spacetime, s: C.GradedSection, label: str, coeff: float = 1.0, region=None,
           max_degree: int = 3) -> Observable:
    """The linear observable u -> coeff * <s, u>."""
    if s.support is None:
        raise ValueError("observables need compactly supported sections")
    if region is not None and not _support_in_region(s, region):
        raise SupportEscapesImage(f"support of {label!r} leaves the declaring region")
    d = homogeneous_degree(s)
    zero = tuple(Fraction(0) for _ in range(st.dim))
    return make_observable(st, ((coeff, (Factor(label, zero, 0, d, s, st),)),), max_degree, region)


def unit(st: G.Spacetime, max_degree: int = 3) -> Observable:
    return Observable(st, ((1.0, ()),), max_degree)


def product(obs) -> Observable:
    obs = list(obs)
    st = obs[0].st
    bound = max(o.max_degree for o in obs)
    words = [(1.0, ())]
    for o in obs:
        words = [(c1 * c2, f1 + f2) for c1, f1 in words for c2, f2 in o.words]
        words = [w for w in words if len(w[1]) <= bound or _raise_degree(len(w[1]), bound)]
    return make_observable(st, words, bound)


def _raise_degree(k, bound):
    raise ValueError(f"product has degree {k} above the bound {bound}")


def _q_factor(x: Factor):
    if x.degree >= 2:
        return None
    qs = C.apply_q(x.st, x.section).only(x.degree + 1)
    qs = C.GradedSection(qs.model, qs.dim, qs.parts, x.section.support)
    return Factor(x.label, x.shift, x.nq + 1, x.degree + 1, qs, x.st)


def apply_Q(o: Observable) -> Observable:
    """Leibniz extension of the shifted differential Q[1] = -Q to words."""
    words = []
    for c, fs in o.words:
        sign = 1.0
        for i, x in enumerate(fs):
            qx = _q_factor(x)
            if qx is not None:
                words.append((-sign * c, fs[:i] + (qx,) + fs[i + 1:]))
            if x.odd:
                sign = -sign
    return make_observable(o.st, words, o.max_degree, o.region)


def _push_factor(f: Embedding, x: Factor) -> Factor:
    return Factor(x.label, tuple(a + b for a, b in zip(x.shift, f.shift)), x.nq, x.degree,
                  push_section(f, x.section), f.target_st)


def pushforward(f, o):
    """Pushforward of a section or an observable; the identity returns its input."""
    f = as_embedding(f)
    if isinstance(o, C.GradedSection):
        return push_section(f, o)
    if f.is_identity:
        return o
    words = tuple((c, tuple(_push_factor(f, x) for x in fs)) for c, fs in o.words)
    return make_observable(f.target_st, words, o.max_degree, f.target if isinstance(f.target, CA.CausalRegion) else None)


def _image(f: Embedding) -> CA.CausalRegion | None:
    if isinstance(f.source, CA.CausalRegion):
        return f.source.translate([float(s) for s in f.shift])
    return None


def factorization_product(morphisms, observables) -> Observable:
    """mu(f_1* O_1, ..., f_n* O_n) for pairwise disjoint images; the empty tuple gives the unit."""
    morphisms = [as_embedding(f) for f in morphisms]
    observables = list(observables)
    if len(morphisms) != len(observables):
        raise ValueError("one observable per morphism")
    if not morphisms:
        raise ValueError("the empty product needs a target; use unit(st)")
    images = [_image(f) for f in morphisms]
    for i, j in itertools.combinations(range(len(images)), 2):
        if images[i] is not None and images[j] is not None and CA.regions_overlap(images[i], images[j]):
            raise OverlappingImages(f"images {i} and {j} intersect")
    return product([pushforward(f, o) for f, o in zip(morphisms, observables)])


def time_ordered_product(morphisms, observables) -> Observable:
    """The product in the given order, which must satisfy the time-order condition."""
    morphisms = [as_embedding(f) for f in morphisms]
    images = [_image(f) for f in morphisms]
    if all(im is not None for im in images) and not CA.check_time_order(images, range(len(images))):
        raise NotTimeOrderable("the tuple is not listed in a valid time order")
    return factorization_product(morphisms, observables)


def evaluate(o: Observable, u: C.GradedSection, nodes: int | None = None) -> float:
    """Value of the observable on the configuration u."""
    cache = {}
    total = 0.0
    for c, fs in o.words:
        val = c
        for x in fs:
            if x.key not in cache:
                cache[x.key] = C.pairing_detail(o.st, x.section, u, nodes=nodes, convention=PLAIN).value
            val *= cache[x.key]
        total += val
    return total


def evaluation_scale(o: Observable, u: C.GradedSection, nodes: int | None = None) -> float:
    """Sum over words of |coeff| times the product of factor pairing scales."""
    total = 0.0
    for c, fs in o.words:
        v = abs(c)
        for x in fs:
            v *= max(C.pairing_detail(o.st, x.section, u, nodes=nodes, convention=PLAIN).scale, 1e-300)
        total += v
    return total


# -- suites --------------------------------------------------------------------------------------------

def _row(id_, desc, anchor, residual, tol, scale=1.0):
    return Row(id_, desc, anchor, float(residual), float(tol), float(scale))


def _control_row(id_, desc, anchor, value, scale, threshold=1e-4):
    """Passes when |value| exceeds threshold * scale; the residual is their ratio."""
    ratio = threshold * scale / abs(value) if value != 0 else math.inf
    return _row(id_, desc, anchor, ratio, 1.0)


@dataclass
class SlabSetup:
    st4: G.Spacetime
    st2: G.Spacetime
    op: GR.GreenOperator


def slab_setup(t_interval=(-1.0, 4.0), modes: int = 64) -> SlabSetup:
    st4 = G.torus_slab(4, t_interval)
    st2 = G.torus_slab(2, t_interval)
    return SlabSetup(st4, st2, GR.GreenOperator(st4, "retarded", (modes, 0, 0)))


def _random_disjoint_pair(rng, setup: SlabSetup, rmin=1.0, rmax=1.2):
    L = setup.st2.periods[1]
    t0, t1 = setup.st2.bounds[0]
    for _ in range(1000):
        r1, r2 = rng.uniform(rmin, rmax, 2)
        tc1 = rng.uniform(t0 + r1 + 0.2, t1 - r1 - 0.2)
        xc1 = rng.uniform(0, L)
        dx = rng.uniform(r1 + r2 + 0.05, L - r1 - r2 - 0.05)
        room = min(dx, L - dx) - r1 - r2
        tc2 = tc1 + rng.uniform(-room, room)
        if not (t0 + r2 + 0.2 < tc2 < t1 - r2 - 0.2):
            continue
        xc2 = float(np.mod(xc1 + dx, L))
        a, b = reduced_diamond(setup.st2, tc1, xc1, r1), reduced_diamond(setup.st2, tc2, xc2, r2)
        if CA.causally_disjoint(a, b):
            return (tc1, xc1, r1), (tc2, xc2, r2)
    raise RuntimeError("could not sample a causally disjoint pair")


def suite_einstein_causality(trials: int = 20, seed: int = 0, setup: SlabSetup | None = None,
                             nodes: int = 48, tol: float = 1e-8) -> list:
    """tau_0 between sections on causally disjoint diamonds, plus two nonzero controls."""
    setup = setup or slab_setup()
    rng = np.random.default_rng(seed)
    anchor = "Einstein causality of the propagator bracket"
    rows = []
    for k in range(trials):
        (tc1, xc1, r1), (tc2, xc2, r2) = _random_disjoint_pair(rng, setup)
        s1 = diamond_section(setup.st4, rng, tc1, xc1, r1, (1,))
        s2 = diamond_section(setup.st4, rng, tc2, xc2, r2, (1,))
        res = tau_detail("unshifted0", setup.op, s1, s2, nodes)
        rows.append(_row(f"observables.einstein_causality.pair{k:02d}",
                         f"|tau_0| for diamonds ({tc1:.3f},{xc1:.3f},r={r1:.3f}) and ({tc2:.3f},{xc2:.3f},r={r2:.3f})",
                         anchor, abs(res.value), tol, res.scale))
    # overlapping supports
    s1 = diamond_section(setup.st4, rng, 1.5, 3.0, 1.0, (1,))
    s2 = diamond_section(setup.st4, rng, 1.7, 3.3, 1.0, (1,))
    res = tau_detail("unshifted0", setup.op, s1, s2, nodes)
    rows.append(_control_row("observables.einstein_causality.control_overlap",
                             "threshold/|tau_0| for overlapping diamonds (expected nonzero)", anchor, res.value,
                             res.scale))
    # disjoint but timelike related
    a, b = reduced_diamond(setup.st2, 0.3, 3.0, 1.0), reduced_diamond(setup.st2, 2.6, 3.0, 1.0)
    related = not CA.causally_disjoint(a, b) and not CA.regions_overlap(a, b)
    s1 = diamond_section(setup.st4, rng, 0.3, 3.0, 1.0, (1,))
    s2 = diamond_section(setup.st4, rng, 2.6, 3.0, 1.0, (1,))
    res = tau_detail("unshifted0", setup.op, s1, s2, nodes)
    row = _control_row("observables.einstein_causality.control_timelike",
                       "threshold/|tau_0| for disjoint but causally related diamonds (expected nonzero)", anchor,
                       res.value, res.scale)
    if not related:
        row.residual = math.inf
    rows.append(row)
    return rows


def solution_family(st2: G.Spacetime, n: int = 10, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    ks = [0, 1, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
    return [GR.mode_solution(st2, [k], float(rng.uniform(0, 2 * np.pi))) for k in ks[:n]]


def suite_cauchy_constancy(f=None, trials: int = 10, seed: int = 0, n_solutions: int = 10,
                           tol: float = 1e-7, modes: int = 64) -> list:
    """Certified time-slice reduction of random sources into the image of a Cauchy morphism."""
    if f is None:
        target = G.torus_slab(2, (-1.0, 4.0))
        f = CA.loc_morphism(G.torus_slab(2, (-0.6, 1.0)), target)
    if not CA.is_cauchy_morphism(f):
        raise NotCauchy("the morphism's image contains no Cauchy surface")
    st = f.target
    slab = [p for p in f.image.primitives if isinstance(p, CA.TimeSlab)]
    if not slab:
        raise NotCauchy("Cauchy constancy is checked for slab images")
    t0, t1 = slab[0].t0, slab[0].t1
    w = t1 - t0
    chi = GR.TemporalCutoff(t0 + 0.25 * w, t1 - 0.25 * w)
    op = GR.GreenOperator(st, "retarded", (modes,))
    sols = solution_family(st, n_solutions, seed)
    rng = np.random.default_rng(seed)
    anchor = "Cauchy constancy through the time-slice reduction"
    L = st.periods[1]
    a, b = st.bounds[0]
    rows = []
    for k in range(trials):
        ht = rng.uniform(0.3, 0.6)
        hx = rng.uniform(0.9, 1.2)
        tc = rng.uniform(a + ht + 0.1, b - ht - 0.1)
        xc = rng.uniform(hx, L - hx)
        modes_ = [(1.0, [0.0], 0.0), (float(rng.uniform(-1, 1)), [float(rng.integers(1, 3))], float(rng.uniform(0, 6)))]
        psi, sup = GR.bump_source(st, [tc, xc], [ht, hx], power=20, spatial_modes=modes_)
        res = GR.time_slice_reduce(op, psi, sup, chi, image=(t0, t1))
        before = GR.field_pairings(st, psi, sols, sup)
        after = GR.field_pairings(st, res.psi_M, sols, res.support, nodes=24, periodic_nodes=160)
        worst = max(abs(va - vb) / max(sa, sb) for (va, sa), (vb, sb) in zip(before, after))
        tag = f"trial{k:02d}"
        rows.append(_row(f"observables.cauchy.pairings.{tag}",
                         f"on-shell pairings before/after reduction over {len(sols)} solutions (relative)",
                         anchor, worst, tol))
        pts = np.column_stack([rng.uniform(a + 0.05, b - 0.05, 20), rng.uniform(0, L, 20)])
        fmax = max(float(np.abs(psi.values(pts)).max()), float(np.abs(psi.values([[tc, xc]])).max()))
        cert = psi.values(pts) - res.psi_M.values(pts) - GR.wave(st, res.certificate).values(pts)
        rows.append(_row(f"observables.cauchy.certificate.{tag}", "psi - psi_M - P h at 20 points (relative)",
                         anchor, float(np.abs(cert).max()) / fmax, tol))
        out = np.column_stack([np.concatenate([rng.uniform(a + 0.05, chi.t_minus - 1e-3, 10),
                                               rng.uniform(chi.t_plus + 1e-3, b - 0.05, 10)]),
                               rng.uniform(0, L, 20)])
        rows.append(_row(f"observables.cauchy.support.{tag}", "psi_M outside the cutoff transition (relative)",
                         anchor, float(np.abs(res.psi_M.values(out)).max()) / fmax, 1e-10))
    return rows


def nested_family(st: G.Spacetime):
    """Diamonds d ⊂ D ⊂ B in the slab, with a nonzero rational shift at the inner level."""
    L = st.periods[1]
    c = [1.5] + [L / 2] * (st.dim - 1)
    B = CA.region(st, CA.diamond_around(c, 1.5))
    D = CA.region(st, CA.diamond_around(c, 0.9))
    d = CA.region(st, CA.diamond_around([c[0] - 0.25] + list(c[1:]), 0.4))
    shift = [Fraction(1, 8), Fraction(1, 16)] + [Fraction(0)] * (st.dim - 2)
    return B, D, d, shift


def suite_prefactorization(seed: int = 0, st: G.Spacetime | None = None, nodes: int = 6, tol: float = 1e-7) -> list:
    """Composition, unit and permutation rows (word equality) and the cochain property of products."""
    st = st or G.torus_slab(4, (-1.0, 4.0))
    rng = np.random.default_rng(seed)
    anchor_pfa = "prefactorization algebra structure maps"
    anchor_to = "time-ordered products commute with Q"
    rows = []
    B, D, d, shift = nested_family(st)
    x = inscribed_box_section(st, rng, d.primitives[0], (1,))
    y = inscribed_box_section(st, rng, d.primitives[0], (-1,))
    O = linear(st, x, "x", region=d) * linear(st, y, "y", region=d) + linear(st, x, "x", 0.5, region=d)
    e1 = embedding(d, D, shift)
    e2 = embedding(D, B)
    e3 = embedding(B, st, [Fraction(1, 4)] + [Fraction(0)] * (st.dim - 1))
    path_a = pushforward(e3, pushforward(e2, pushforward(e1, O)))
    path_b = pushforward(compose(compose(e1, e2), e3), O)
    path_c = pushforward(compose(e1, compose(e2, e3)), O)
    ok = path_a.same_words(path_b) and path_b.same_words(path_c)
    rows.append(_row("observables.prefactorization.composition", "nested pushforwards vs composed morphism (0 = equal words)",
                     anchor_pfa, 0.0 if ok else 1.0, 0.0))
    same = pushforward(identity(d), O) is O
    rows.append(_row("observables.prefactorization.unit", "identity pushforward returns its input (0 = identical)",
                     anchor_pfa, 0.0 if same else 1.0, 0.0))
    # three spacelike diamonds, each with an observable of different parity
    L = st.periods[1]
    regs = [CA.region(st, CA.diamond_around([1.5, L * (i + 0.5) / 3] + [L / 2] * (st.dim - 2), 0.8))
            for i in range(3)]
    obs = []
    for i, (reg, deg) in enumerate(zip(regs, (-1, 0, 1))):
        s = inscribed_box_section(st, rng, reg.primitives[0], (deg,))
        obs.append(linear(st, s, f"s{i}", region=reg) + unit(st).scaled(0.5 + i))
    morph = [embedding(r, st) for r in regs]
    ref = factorization_product(morph, obs)
    for perm in itertools.permutations(range(3)):
        got = factorization_product([morph[i] for i in perm], [obs[i] for i in perm])
        rows.append(_row(f"observables.prefactorization.equivariance.{''.join(map(str, perm))}",
                         "permuted factorization product vs identity order (0 = equal words)", anchor_pfa,
                         0.0 if got.same_words(ref) else 1.0, 0.0))
    # cochain property for a time-ordered product of two linear observables
    # sources sit elsewhere in the slab so that both sides of the identity are computed differently
    up = [Fraction(1, 8), Fraction(-1, 4), Fraction(3, 8)] + [Fraction(0)] * (st.dim - 3)
    down = [Fraction(-1, 4), Fraction(1, 2), Fraction(0)] + [Fraction(0)] * (st.dim - 3)
    lo_reg = CA.region(st, CA.diamond_around(np.array([0.2, L / 2] + [L / 2] * (st.dim - 2)) - [float(v) for v in up], 0.7))
    hi_reg = CA.region(st, CA.diamond_around(np.array([2.4, L / 2] + [L / 2] * (st.dim - 2)) - [float(v) for v in down], 0.7))
    a = inscribed_box_section(st, rng, lo_reg.primitives[0], (0,))
    b = inscribed_box_section(st, rng, hi_reg.primitives[0], (-1,))
    Oa, Ob = linear(st, a, "a", region=lo_reg), linear(st, b, "b", region=hi_reg)
    f_lo, f_hi = embedding(lo_reg, st, up), embedding(hi_reg, st, down)
    # the later region comes first: the future of each entry misses all later entries
    order = [f_hi, f_lo]
    lhs = apply_Q(time_ordered_product(order, [Ob, Oa]))
    sign = -1.0 if (homogeneous_degree(b) - 1) % 2 else 1.0
    rhs = time_ordered_product(order, [apply_Q(Ob), Oa]) + \
        time_ordered_product(order, [Ob, apply_Q(Oa)]).scaled(sign)
    u = C.random_section("gr", st, rng, center=[1.3] + [L / 2] * (st.dim - 1), degree=1)
    diff = evaluate(lhs, u, nodes) - evaluate(rhs, u, nodes)
    scale = max(evaluation_scale(lhs, u, nodes), evaluation_scale(rhs, u, nodes))
    rows.append(_row("observables.time_ordered.cochain", "Q of a time-ordered product minus its Leibniz expansion",
                     anchor_to, abs(diff), tol, scale))
    rows.append(_row("observables.time_ordered.cochain_words", "same comparison word by word (0 = equal words)",
                     anchor_to, 0.0 if lhs.same_words(rhs) else 1.0, 0.0))
    refused = False
    try:
        time_ordered_product([f_lo, f_hi], [Oa, Ob])
    except NotTimeOrderable:
        refused = True
    rows.append(_row("observables.time_ordered.order_enforced", "reversed time order is refused (0 = refused)",
                     anchor_to, 0.0 if refused else 1.0, 0.0))
    return rows


def q_squared_rows(seed: int = 0, st: G.Spacetime | None = None, tol: float = 1e-7) -> list:
    """Q^2 = 0 on Leibniz-extended observables of degree up to three."""
    st = st or G.torus_slab(4, (-1.0, 4.0))
    rng = np.random.default_rng(seed)
    L = st.periods[1]
    regs = [CA.region(st, CA.diamond_around([1.5, L * (i + 0.5) / 3] + [L / 2] * (st.dim - 2), 0.8))
            for i in range(3)]
    xs = [linear(st, inscribed_box_section(st, rng, r.primitives[0], (d,)), f"q{i}")
          for i, (r, d) in enumerate(zip(regs, (-1, 0, -1)))]
    O = xs[0] * xs[1] * xs[2] + xs[0] * xs[1] + xs[2]
    QQ = apply_Q(apply_Q(O))
    pts = np.concatenate([r.sample(4, rng) for r in regs])
    resid, scale = 0.0, 0.0
    for c, fs in QQ.words:
        # surviving words carry a doubly differentiated factor
        for x in fs:
            if x.nq == 2:
                v = C._section_max(x.section, pts)
                resid = max(resid, abs(c) * v)
    for _, fs in O.words:
        for x in fs:
            scale = max(scale, C._section_max(x.section, pts, 2))
    cancelled = all(any(x.nq == 2 for x in fs) for _, fs in QQ.words)
    return [
        _row("observables.q_squared.words", "every word of Q^2 O carries Q^2 of a factor (0 = cancellation exact)",
             "Q squares to zero on observables", 0.0 if cancelled else 1.0, 0.0),
        _row("observables.q_squared.values", "sup of Q^2 factors in the surviving words",
             "Q squares to zero on observables", resid, tol, max(scale, 1.0)),
    ]


def tau_rows(trials: int = 2, seed: int = 0, setup: SlabSetup | None = None, nodes: int = 48) -> list:
    """Symmetry rows for the three pairings and the boundary identity of tau_D."""
    setup = setup or slab_setup()
    rng = np.random.default_rng(seed)
    rows = []
    sym = {"shiftedMinus1": [], "unshifted0": [], "dirac": []}
    for _ in range(trials):
        tc, xc = rng.uniform(1.0, 2.0), rng.uniform(2.0, 4.0)
        a = diamond_section(setup.st4, rng, tc, xc, 1.2, (1,))
        b = diamond_section(setup.st4, rng, tc + rng.uniform(-0.3, 0.3), xc + rng.uniform(-0.4, 0.4), 1.2, (1,))
        c = diamond_section(setup.st4, rng, tc + rng.uniform(-0.3, 0.3), xc + rng.uniform(-0.4, 0.4), 1.2, (0,))
        m1, m2 = tau_detail("shiftedMinus1", setup.st4, a, c, nodes), tau_detail("shiftedMinus1", setup.st4, c, a, nodes)
        sym["shiftedMinus1"].append((m1.value + m2.value, max(m1.scale, m2.scale)))
        for kind, sgn in (("unshifted0", 1.0), ("dirac", -1.0)):
            p, q = tau_detail(kind, setup.op, a, b, nodes), tau_detail(kind, setup.op, b, a, nodes)
            sym[kind].append((p.value + sgn * q.value, max(p.scale, q.scale)))
    labels = {"shiftedMinus1": "graded antisymmetry tau_-1(a,b) + tau_-1(b,a)",
              "unshifted0": "antisymmetry tau_0(a,b) + tau_0(b,a)",
              "dirac": "symmetry tau_D(a,b) - tau_D(b,a)"}
    for kind, vals in sym.items():
        worst = max(abs(v) / s for v, s in vals)
        rows.append(_row(f"observables.tau.{kind}.symmetry", labels[kind] + " (relative)",
                         "the three Poisson pairings", worst, 1e-8))
    worst = 0.0
    for d1 in (-1, 0, 1, 2):
        a = diamond_section(setup.st4, rng, 1.0, 3.0, 1.2, (d1,))
        b = diamond_section(setup.st4, rng, 1.3, 3.4, 1.2, (1 - d1,))
        lhs, rhs, scale = d_tau_dirac(setup.op, a, b, nodes)
        worst = max(worst, abs(lhs - rhs) / scale)
    rows.append(_row("observables.tau.dirac_boundary", "boundary of tau_D minus tau_-1 over all degree pairs (relative)",
                     "Q-boundary of the symmetric propagator pairing is the shifted pairing", worst, 1e-7))
    return rows


def naturality_rows(morphisms: int = 4, seed: int = 0, nodes: int = 48) -> list:
    """Push/pull naturality squares for the pairing, W and G along slab time translations."""
    rng = np.random.default_rng(seed)
    N = G.torus_slab(4, (-1.0, 4.0))
    M = G.torus_slab(4, (-1.0, 2.0))
    opN = GR.GreenOperator(N, "retarded", (64, 0, 0))
    opM = GR.GreenOperator(M, "retarded", (64, 0, 0))
    L = N.periods[1]
    res = {"pairing": [], "witness": [], "green": []}
    for _ in range(morphisms):
        sh = [Fraction(int(rng.integers(0, 17)), 8), Fraction(int(rng.integers(-16, 17)), 16),
              Fraction(int(rng.integers(-8, 9)), 8), Fraction(0)]
        f = CA.loc_morphism(M, N, sh)
        tc, xc = rng.uniform(0.2, 0.8), rng.uniform(1.5, L - 1.5)
        psi = C.random_section("gr", M, rng, center=[tc, xc, 1.0, 1.0], halfwidths=[0.4, 1.0, 1.0, 1.0],
                               degree=1, power=20, active=X1_ONLY)
        u = C.random_section("gr", N, rng, center=[1.5, 3.0, 3.0, 3.0], degree=2, active=X1_ONLY)
        pushed = pushforward(f, psi)
        a = C.pairing_detail(N, pushed, u, nodes=nodes)
        b = C.pairing_detail(M, psi, pull_section(f, u), nodes=nodes)
        res["pairing"].append(abs(a.value - b.value) / max(a.scale, b.scale))
        s = np.array([float(v) for v in sh])
        pts = np.column_stack([rng.uniform(tc - 0.3, tc + 0.6, 5), rng.uniform(xc - 1.5, xc + 1.5, 5),
                               rng.uniform(0, L, 5), rng.uniform(0, L, 5)]) + s
        ref = np.vstack([pts - s, [[tc, xc, 1.0, 1.0]]])
        wN, wM = C.apply_w(N, pushed), pushforward(f, C.apply_w(M, psi))
        res["witness"].append(C._diff_max(wN, wM, pts) / C._section_max(psi, ref, 1))
        one = psi.only(1)
        gN = opN.apply(pushforward(f, one))
        gM = push_section(f, C.GradedSection(one.model, one.dim, opM.apply(one).parts, one.support))
        res["green"].append(C._diff_max(gN, gM, pts) / max(C._section_max(gM, pts), C._section_max(one, ref)))
    tols = {"pairing": 1e-8, "witness": 1e-9, "green": 1e-8}
    return [_row(f"observables.naturality.{k}", f"push/pull square for the {k} over {morphisms} morphisms (relative)",
                 "naturality of pairings, witnesses and Green operators", max(v), tols[k]) for k, v in res.items()]


def verify_observables(trials: int = 20, seed: int = 0, cauchy_trials: int = 3, tau_trials: int = 2,
                       morphisms: int = 4, st: G.Spacetime | None = None, modes: int = 64) -> list:
    """All observable-level rows; ``st`` is the 3+1 torus slab hosting the pairings."""
    if st is not None and (st.chart != "torus_slab" or st.dim != 4):
        raise UnsupportedBackground("observable rows run on a 3+1 torus slab")
    setup = slab_setup(st.bounds[0] if st is not None else (-1.0, 4.0), modes)
    rows = []
    rows += tau_rows(tau_trials, seed, setup)
    rows += q_squared_rows(seed)
    rows += naturality_rows(morphisms, seed)
    rows += suite_einstein_causality(trials, seed, setup)
    rows += suite_cauchy_constancy(trials=cauchy_trials, seed=seed)
    rows += suite_prefactorization(seed)
    return rows
