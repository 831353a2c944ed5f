"""Causal structure of flat charts: Minkowski boxes and ultrastatic torus slabs.

On these backgrounds ``p << q`` (chronological) holds exactly when
``t_q - t_p > d(x_p, x_q)`` and ``p < q`` (causal, reflexive) when
``t_q - t_p >= d``, where ``d`` is the Euclidean distance or, on a torus, the
distance of the closest winding representative.  Every decision below reduces
to that criterion, except overlap of regions in more than one space dimension
(a small second-order cone feasibility problem) and convexity of general
unions (sampling with explicit witnesses).

Regions are finite unions of open primitives: Alexandrov diamonds, time slabs
and coordinate boxes.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import (
    EmptyCover,
    InvariantViolation,
    NonDiamondRegion,
    NotCauchy,
    NotTimeOrderable,
    OutOfChart,
    OverlappingRegions,
    UnsupportedBackground,
)
from .geometry import Spacetime

SUPPORTED_CHARTS = ("minkowski_box", "torus_slab")
DEFAULT_DENSITY = 200
OVERLAP_TOL = 1e-9
_WINDINGS = (-1, 0, 1)


def require_supported(st: Spacetime) -> None:
    if st.chart not in SUPPORTED_CHARTS:
        raise UnsupportedBackground(f"causal decisions need a Minkowski box or torus slab, got {st.chart!r}")


def _periods(st: Spacetime) -> np.ndarray:
    """Spatial circumferences, inf for non-periodic directions."""
    return np.array([st.periods[i] if st.is_periodic(i) else np.inf for i in range(1, st.dim)], dtype=float)


def _reduce(st: Spacetime, x: np.ndarray) -> np.ndarray:
    """Map spatial coordinates of points into the fundamental domain."""
    x = np.array(x, dtype=float)
    for i in range(1, st.dim):
        if st.is_periodic(i):
            x[..., i] = np.mod(x[..., i], st.periods[i])
    return x


def _in_chart(st: Spacetime, x: np.ndarray) -> np.ndarray:
    ok = np.ones(x.shape[:-1], dtype=bool)
    for i, (lo, hi) in enumerate(st.bounds):
        if not st.is_periodic(i):
            ok &= (x[..., i] > lo) & (x[..., i] < hi)
    return ok


def spatial_distance(st: Spacetime, a, b) -> np.ndarray:
    """Euclidean or minimal-winding torus distance between spatial parts."""
    require_supported(st)
    a = _reduce(st, np.asarray(a, dtype=float))
    b = _reduce(st, np.asarray(b, dtype=float))
    d = b[..., 1:] - a[..., 1:]
    L = _periods(st)
    per = np.isfinite(L)
    if per.any():
        Lp = L[per]
        cand = np.stack([np.abs(d[..., per] + n * Lp) for n in _WINDINGS], axis=0)
        d = d.copy()
        d[..., per] = cand.min(axis=0)
    return np.sqrt((d * d).sum(axis=-1))


@dataclass(frozen=True)
class Relation:
    chronological: np.ndarray | bool
    causal: np.ndarray | bool


def relation(st: Spacetime, p, q) -> Relation:
    """``p << q`` and ``p < q`` (the latter reflexive, as for J)."""
    require_supported(st)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    dt = q[..., 0] - p[..., 0]
    d = spatial_distance(st, p, q)
    chrono, causal = dt > d, dt >= d
    if chrono.ndim == 0:
        return Relation(bool(chrono), bool(causal))
    return Relation(chrono, causal)


def chronological(st: Spacetime, p, q):
    return relation(st, p, q).chronological


# -- primitives -------------------------------------------------------------------

@dataclass(frozen=True)
class Diamond:
    """I+(p) ∩ I-(q)."""

    p: tuple
    q: tuple

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))

    @property
    def kind(self) -> str:
        return "diamond"


@dataclass(frozen=True)
class TimeSlab:
    t0: float
    t1: float

    @property
    def kind(self) -> str:
        return "slab"


@dataclass(frozen=True)
class CoordBox:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("box intervals must be nonempty")

    @property
    def kind(self) -> str:
        return "box"


Primitive = Diamond | TimeSlab | CoordBox


def diamond_around(center, radius: float) -> Diamond:
    c = np.asarray(center, dtype=float)
    e = np.zeros_like(c)
    e[0] = radius
    return Diamond(tuple(c - e), tuple(c + e))


@dataclass(frozen=True)
class Cone:
    """Open chronological future (sign=+1) or past (sign=-1) of a point."""

    st: Spacetime
    apex: tuple
    sign: int = 1

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        a = np.broadcast_to(np.asarray(self.apex, dtype=float), pts.shape)
        if self.sign > 0:
            return np.asarray(relation(self.st, a, pts).chronological)
        return np.asarray(relation(self.st, pts, a).chronological)


# -- regions ------------------------------------------------------------------------

def _box_arrays(st: Spacetime, prim) -> tuple[np.ndarray, np.ndarray]:
    """(lo, hi) over all coordinates; slabs span the chart spatially."""
    if isinstance(prim, TimeSlab):
        lo = [prim.t0] + [st.bounds[i][0] if not st.is_periodic(i) else -np.inf for i in range(1, st.dim)]
        hi = [prim.t1] + [st.bounds[i][1] if not st.is_periodic(i) else np.inf for i in range(1, st.dim)]
        return np.array(lo), np.array(hi)
    lo, hi = np.array(prim.lo), np.array(prim.hi)
    for i in range(1, st.dim):
        if st.is_periodic(i) and hi[i] - lo[i] >= st.periods[i]:
            lo[i], hi[i] = -np.inf, np.inf
    return lo, hi


def _bottom(st, prim):
    """(time, spatial lo, spatial hi) of the set approached from below."""
    if isinstance(prim, Diamond):
        p = _reduce(st, np.array(prim.p))
        return p[0], p[1:], p[1:]
    lo, hi = _box_arrays(st, prim)
    return lo[0], lo[1:], hi[1:]


def _top(st, prim):
    if isinstance(prim, Diamond):
        q = _reduce(st, np.array(prim.q))
        return q[0], q[1:], q[1:]
    lo, hi = _box_arrays(st, prim)
    return hi[0], lo[1:], hi[1:]


def _interval_gap(st, alo, ahi, blo, bhi) -> float:
    """Distance between two closed spatial boxes (points are degenerate boxes)."""
    L = _periods(st)
    gaps = np.zeros(len(alo))
    for i in range(len(alo)):
        if not (np.isfinite(alo[i]) and np.isfinite(blo[i])):
            continue
        if np.isfinite(L[i]):
            cand = [max(0.0, blo[i] + n * L[i] - ahi[i], alo[i] - bhi[i] - n * L[i]) for n in range(-2, 3)]
            gaps[i] = min(cand)
        else:
            gaps[i] = max(0.0, blo[i] - ahi[i], alo[i] - bhi[i])
    return float(np.sqrt((gaps * gaps).sum()))


def _meets_margin(st, a, b) -> float:
    """sup over x in a, y in b of t_y - t_x - d(x, y); positive iff J+(a) meets b."""
    ta, alo, ahi = _bottom(st, a)
    tb, blo, bhi = _top(st, b)
    return float(tb - ta - _interval_gap(st, alo, ahi, blo, bhi))


@dataclass(frozen=True, eq=False)
class CausalRegion:
    st: Spacetime
    primitives: tuple

    def __post_init__(self):
        require_supported(self.st)
        prims = tuple(self.primitives)
        object.__setattr__(self, "primitives", prims)
        if not prims:
            raise ValueError("a region needs at least one primitive")
        for pr in prims:
            self._check_primitive(pr)

    def _check_primitive(self, pr) -> None:
        st = self.st
        if isinstance(pr, Diamond):
            if len(pr.p) != st.dim or len(pr.q) != st.dim:
                raise ValueError("diamond vertices have the wrong dimension")
            if not relation(st, pr.p, pr.q).chronological:
                raise InvariantViolation("diamond vertices must satisfy p << q")
            self._check_time(pr.p[0], pr.q[0])
            if st.chart == "minkowski_box":
                lo, hi = diamond_bbox(pr)
                self._check_space(lo, hi)
        elif isinstance(pr, TimeSlab):
            if pr.t1 <= pr.t0:
                raise ValueError("empty time slab")
            self._check_time(pr.t0, pr.t1)
        elif isinstance(pr, CoordBox):
            if len(pr.lo) != st.dim:
                raise ValueError("box has the wrong dimension")
            self._check_time(pr.lo[0], pr.hi[0])
            self._check_space(np.array(pr.lo), np.array(pr.hi))
        else:
            raise TypeError(f"unknown primitive {pr!r}")

    def _check_time(self, t0, t1):
        lo, hi = self.st.bounds[0]
        if t0 < lo or t1 > hi:
            raise OutOfChart(f"time extent ({t0}, {t1}) leaves the chart ({lo}, {hi})")

    def _check_space(self, lo, hi):
        for i in range(1, self.st.dim):
            if self.st.is_periodic(i):
                continue
            blo, bhi = self.st.bounds[i]
            if lo[i] < blo - 1e-12 or hi[i] > bhi + 1e-12:
                raise OutOfChart(f"coordinate {i} extent leaves the chart")

    @property
    def dim(self) -> int:
        return self.st.dim

    @property
    def is_diamond_union(self) -> bool:
        return all(isinstance(p, Diamond) for p in self.primitives)

    def diamonds(self) -> list:
        if not self.is_diamond_union:
            raise NonDiamondRegion("region contains slabs or boxes")
        return list(self.primitives)

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        out = np.zeros(pts.shape[:-1], dtype=bool)
        for pr in self.primitives:
            out |= primitive_contains(self.st, pr, pts)
        return out & _in_chart(self.st, pts)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate box containing the region (spatially unbounded entries clipped to the chart)."""
        los, his = [], []
        for pr in self.primitives:
            lo, hi = primitive_bbox(self.st, pr)
            los.append(lo)
            his.append(hi)
        return np.min(los, axis=0), np.max(his, axis=0)

    def translate(self, shift) -> "CausalRegion":
        s = np.asarray([float(v) for v in shift])
        prims = []
        for pr in self.primitives:
            if isinstance(pr, Diamond):
                prims.append(Diamond(tuple(np.array(pr.p) + s), tuple(np.array(pr.q) + s)))
            elif isinstance(pr, TimeSlab):
                prims.append(TimeSlab(pr.t0 + s[0], pr.t1 + s[0]))
            else:
                prims.append(CoordBox(tuple(np.array(pr.lo) + s), tuple(np.array(pr.hi) + s)))
        return CausalRegion(self.st, tuple(prims))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Up to n points of the region by rejection from its bounding box."""
        lo, hi = self.bounding_box()
        out = []
        for _ in range(50):
            pts = rng.uniform(lo, hi, size=(4 * n, self.dim))
            out.extend(pts[self.contains(pts)])
            if len(out) >= n:
                break
        if not out:
            raise InvariantViolation("could not sample the region")
        return np.array(out[:n])


def region(st: Spacetime, *primitives) -> CausalRegion:
    return CausalRegion(st, tuple(primitives))


def diamond_bbox(d: Diamond) -> tuple[np.ndarray, np.ndarray]:
    """Bounding box of the diamond in the universal cover: time (t_p, t_q), spatial ellipsoid extents."""
    p, q = np.array(d.p), np.array(d.q)
    a = 0.5 * (q[0] - p[0])
    c = 0.5 * (p[1:] + q[1:])
    dx = q[1:] - p[1:]
    f = 0.5 * np.linalg.norm(dx)
    b2 = max(a * a - f * f, 0.0)
    u = dx / (2 * f) if f > 0 else np.zeros_like(dx)
    ext = np.sqrt(a * a * u * u + b2 * (1 - u * u))
    return np.concatenate([[p[0]], c - ext]), np.concatenate([[q[0]], c + ext])


def primitive_bbox(st: Spacetime, pr) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pr, Diamond):
        return diamond_bbox(pr)
    lo, hi = _box_arrays(st, pr)
    lo, hi = lo.copy(), hi.copy()
    for i in range(1, st.dim):
        if not np.isfinite(lo[i]):
            lo[i], hi[i] = st.bounds[i]
    return lo, hi


def primitive_contains(st: Spacetime, pr, pts: np.ndarray) -> np.ndarray:
    if isinstance(pr, Diamond):
        p = np.broadcast_to(np.array(pr.p), pts.shape)
        q = np.broadcast_to(np.array(pr.q), pts.shape)
        return np.asarray(relation(st, p, pts).chronological) & np.asarray(relation(st, pts, q).chronological)
    lo, hi = _box_arrays(st, pr)
    ok = (pts[..., 0] > lo[0]) & (pts[..., 0] < hi[0])
    for i in range(1, st.dim):
        if not np.isfinite(lo[i]):
            continue
        x = pts[..., i]
        if st.is_periodic(i):
            off = np.mod(x - lo[i], st.periods[i])
            ok &= (off > 0) & (off < hi[i] - lo[i])
        else:
            ok &= (x > lo[i]) & (x < hi[i])
    return ok


# -- futures and pasts ---------------------------------------------------------------

def causal_future_of_diamond(st: Spacetime, d: Diamond) -> Cone:
    """J+(D) = I+(p) for the open diamond D = I+(p) ∩ I-(q)."""
    require_supported(st)
    return Cone(st, d.p, +1)


def causal_past_of_diamond(st: Spacetime, d: Diamond) -> Cone:
    require_supported(st)
    return Cone(st, d.q, -1)


def in_causal_future(reg: CausalRegion, points) -> np.ndarray:
    """Exact membership in J+(R) for every primitive kind."""
    st = reg.st
    pts = np.asarray(points, dtype=float)
    out = np.zeros(pts.shape[:-1], dtype=bool)
    for pr in reg.primitives:
        out |= _future_membership(st, pr, pts)
    return out


def _future_membership(st, pr, pts):
    t, lo, hi = _bottom(st, pr)
    flat = pts.reshape(-1, st.dim)
    res = np.array([x[0] - t - _interval_gap(st, lo, hi, x[1:], x[1:]) > 0 for x in _reduce(st, flat)])
    return res.reshape(pts.shape[:-1])


def future_meets(a: CausalRegion, b: CausalRegion) -> bool:
    """Whether J+(a) ∩ b is nonempty (exact for all primitive kinds)."""
    st = a.st
    return any(_meets_margin(st, x, y) > 0 for x in a.primitives for y in b.primitives)


# -- decisions -------------------------------------------------------------------------

@dataclass
class Decision:
    """A boolean verdict with the method used and, when negative, a witness."""

    value: bool
    method: str
    witness: object = None
    density: int | None = None

    def __bool__(self) -> bool:
        return bool(self.value)


def causally_disjoint(r1: CausalRegion, r2: CausalRegion, method: str = "auto") -> Decision:
    """(J+(r1) ∪ J-(r1)) ∩ r2 = ∅.

    For diamonds this is ``not (p1 << q2) and not (p2 << q1)`` over all pairs;
    the same margin computation decides slabs and boxes, so ``auto`` is exact
    for every primitive.  ``method='exact'`` insists on diamond unions.
    """
    require_supported(r1.st)
    if method == "exact" and not (r1.is_diamond_union and r2.is_diamond_union):
        raise NonDiamondRegion("the two-point criterion applies to diamond unions only")
    if method not in ("auto", "exact"):
        raise ValueError(f"unknown method {method!r}")
    st = r1.st
    for a in r1.primitives:
        for b in r2.primitives:
            if _meets_margin(st, a, b) > 0:
                return Decision(False, "criterion", (a, b))
            if _meets_margin(st, b, a) > 0:
                return Decision(False, "criterion", (b, a))
    return Decision(True, "criterion")


# overlap ---------------------------------------------------------------------------------

def _lift_diamond(st, d: Diamond) -> tuple[np.ndarray, np.ndarray]:
    """Lift to the universal cover with q at the winding closest to p."""
    p, q = _reduce(st, np.array(d.p)), _reduce(st, np.array(d.q))
    L = _periods(st)
    for i, Li in enumerate(L):
        if np.isfinite(Li):
            if q[0] - p[0] > Li / 2:
                raise UnsupportedBackground("diamond time extent exceeds half the torus circumference")
            k = np.round((q[i + 1] - p[i + 1]) / Li)
            q[i + 1] -= k * Li
    return p, q


def _primitive_constraints(st, pr, t, x, s, shift):
    import cvxpy as cp

    cons = []
    if isinstance(pr, Diamond):
        p, q = _lift_diamond(st, pr)
        p, q = p + shift, q + shift
        cons += [t - p[0] - s >= cp.norm(x - p[1:]), q[0] - t - s >= cp.norm(x - q[1:])]
    else:
        lo, hi = _box_arrays(st, pr)
        lo, hi = lo + shift, hi + shift
        cons += [t >= lo[0] + s, t <= hi[0] - s]
        for i in range(1, st.dim):
            if np.isfinite(lo[i]):
                cons += [x[i - 1] >= lo[i] + s, x[i - 1] <= hi[i] - s]
    return cons


def _overlap_margin(st, a, b, shift) -> float:
    import cvxpy as cp

    t = cp.Variable()
    x = cp.Variable(st.dim - 1)
    s = cp.Variable()
    zero = np.zeros(st.dim)
    cons = _primitive_constraints(st, a, t, x, s, zero) + _primitive_constraints(st, b, t, x, s, shift)
    for i in range(1, st.dim):
        if not st.is_periodic(i):
            lo, hi = st.bounds[i]
            cons += [x[i - 1] >= lo + s, x[i - 1] <= hi - s]
    cons.append(s <= 1.0)
    prob = cp.Problem(cp.Maximize(s), cons)
    prob.solve(solver=cp.CLARABEL)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        return -np.inf
    return float(s.value)


def _null_rect(pr: Diamond):
    p, q = pr.p, pr.q
    return (p[0] - p[1], q[0] - q[1]), (p[0] + p[1], q[0] + q[1])


def primitives_overlap(st: Spacetime, a, b) -> bool:
    """Whether two open primitives intersect."""
    require_supported(st)
    if st.dim == 2 and st.chart == "minkowski_box" and isinstance(a, Diamond) and isinstance(b, Diamond):
        (au, av), (bu, bv) = _null_rect(a), _null_rect(b)
        return au[0] < bu[1] and bu[0] < au[1] and av[0] < bv[1] and bv[0] < av[1]
    L = _periods(st)
    per = [i for i, Li in enumerate(L) if np.isfinite(Li)]
    alo, ahi = _lifted_bbox(st, a)
    blo, bhi = _lifted_bbox(st, b)
    if alo[0] >= bhi[0] or blo[0] >= ahi[0]:
        return False
    for wind in itertools.product(range(-2, 3), repeat=len(per)):
        shift = np.zeros(st.dim)
        for i, n in zip(per, wind):
            shift[i + 1] = n * L[i]
        if np.any(alo >= bhi + shift) or np.any(blo + shift >= ahi):
            continue
        scale = 1.0 + np.abs(np.concatenate([alo, ahi, blo, bhi])[np.isfinite(np.concatenate([alo, ahi, blo, bhi]))]).max()
        if _overlap_margin(st, a, b, shift) > OVERLAP_TOL * scale:
            return True
    return False


def _lifted_bbox(st, pr):
    if isinstance(pr, Diamond):
        p, q = _lift_diamond(st, pr)
        return diamond_bbox(Diamond(tuple(p), tuple(q)))
    lo, hi = _box_arrays(st, pr)
    return lo, hi


def regions_overlap(a: CausalRegion, b: CausalRegion) -> bool:
    return any(primitives_overlap(a.st, x, y) for x in a.primitives for y in b.primitives)


# time ordering --------------------------------------------------------------------------

def precedence_edges(regions: Sequence[CausalRegion]) -> list[tuple[int, int]]:
    """Edges (i, j): region i must come before j, because J+(R_j) meets R_i."""
    n = len(regions)
    return [(i, j) for i in range(n) for j in range(n) if i != j and future_meets(regions[j], regions[i])]


def check_time_order(regions: Sequence[CausalRegion], perm: Sequence[int]) -> bool:
    """J+(R_perm[i]) ∩ R_perm[j] = ∅ for all i < j."""
    return all(not future_meets(regions[perm[i]], regions[perm[j]])
               for i in range(len(perm)) for j in range(i + 1, len(perm)))


def time_order_permutation(regions: Sequence[CausalRegion], check_overlap: bool = True) -> list[int]:
    """A permutation with earlier positions' futures missing every later region.

    Ties are broken by input index, so causally disjoint tuples come back as
    the identity.
    """
    regions = list(regions)
    if check_overlap:
        for i, j in itertools.combinations(range(len(regions)), 2):
            if regions_overlap(regions[i], regions[j]):
                raise OverlappingRegions(f"regions {i} and {j} intersect")
    n = len(regions)
    succ = {i: [] for i in range(n)}
    indeg = [0] * n
    for i, j in precedence_edges(regions):
        succ[i].append(j)
        indeg[j] += 1
    ready = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        i = heapq.heappop(ready)
        out.append(i)
        for j in succ[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(ready, j)
    if len(out) < n:
        stuck = sorted(set(range(n)) - set(out))
        raise NotTimeOrderable(f"precedence cycle among regions {stuck}")
    if not check_time_order(regions, out):
        raise InvariantViolation("computed permutation fails the time-order condition")
    return out


# convexity ---------------------------------------------------------------------------------

def _rect_union_covers(rect, rects) -> bool:
    """Open rectangle ⊆ union of open rectangles, decided on the compressed grid."""
    (u0, u1), (v0, v1) = rect

    def pieces(a, b, cuts):
        pts = sorted({c for c in cuts if a < c < b})
        edges = [a] + pts + [b]
        out = [("open", edges[k], edges[k + 1]) for k in range(len(edges) - 1)]
        out += [("point", c, c) for c in pts]
        return out

    ucuts = [c for (uu, _) in rects for c in uu]
    vcuts = [c for (_, vv) in rects for c in vv]

    def inside(piece, lo, hi):
        kind, a, b = piece
        return (lo <= a and b <= hi) if kind == "open" else (lo < a < hi)

    for pu in pieces(u0, u1, ucuts):
        for pv in pieces(v0, v1, vcuts):
            if not any(inside(pu, *uu) and inside(pv, *vv) for uu, vv in rects):
                return False
    return True


def _sample_between(st, a, b, density: int, rng) -> np.ndarray:
    """Candidate points of J+(a) ∩ J-(b): a grid or Sobol set plus points on anchor segments."""
    from scipy.stats import qmc

    ta, alo, ahi = _bottom(st, a)
    tb, blo, bhi = _top(st, b)
    lo_a, hi_a = primitive_bbox(st, a)
    lo_b, hi_b = primitive_bbox(st, b)
    lo = np.minimum(lo_a, lo_b)
    hi = np.maximum(hi_a, hi_b)
    lo[0], hi[0] = ta, tb
    if st.dim == 2:
        g = [np.linspace(lo[i], hi[i], density + 2)[1:-1] for i in range(2)]
        grid = np.stack(np.meshgrid(*g, indexing="ij"), axis=-1).reshape(-1, 2)
    else:
        sob = qmc.Sobol(st.dim, seed=rng)
        m = int(np.ceil(np.log2(density * density)))
        grid = qmc.scale(sob.random_base2(m), lo, hi)
    anchors_a = _anchor_points(alo, ahi, ta)
    anchors_b = _anchor_points(blo, bhi, tb)
    fr = np.linspace(0.0, 1.0, 41)[1:-1]
    seg = [x + f * (y - x) for x in anchors_a for y in anchors_b for f in fr]
    return np.vstack([grid, np.array(seg)])


def _anchor_points(lo, hi, t):
    lo = np.where(np.isfinite(lo), lo, 0.0)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    corners = [np.array(c) for c in itertools.product(*zip(lo, hi))]
    corners.append(0.5 * (lo + hi))
    return [np.concatenate([[t], c]) for c in corners]


def causally_convex(reg: CausalRegion, density: int = DEFAULT_DENSITY, seed: int = 0) -> Decision:
    """J+(R) ∩ J-(R) ⊆ R.

    Single diamonds and slabs are convex; a box with a bounded spatial side
    never is.  Diamond unions in 1+1 Minkowski are decided exactly in null
    coordinates.  Other unions are checked on ``density`` points per
    dimension (2D grids) or ``density**2`` Sobol points (4D) in each
    J+(A) ∩ J-(B), together with points on segments between the anchoring
    vertices; a negative verdict always carries a witness point.
    """
    st = reg.st
    require_supported(st)
    prims = reg.primitives
    if len(prims) == 1:
        pr = prims[0]
        if isinstance(pr, (Diamond, TimeSlab)):
            return Decision(True, "exact")
        lo, hi = _box_arrays(st, pr)
        bounded = [i for i in range(1, st.dim) if np.isfinite(lo[i])
                   and not (not st.is_periodic(i) and lo[i] <= st.bounds[i][0] and hi[i] >= st.bounds[i][1])]
        if not bounded:
            return Decision(True, "exact")
        i = bounded[0]
        # a point beside the box, reachable from its bottom face and reaching its top face
        T = hi[0] - lo[0]
        w = np.where(np.isfinite(lo), 0.5 * (lo + hi), 0.0)
        w[0] = 0.5 * (lo[0] + hi[0])
        room_lo = np.inf if st.is_periodic(i) else lo[i] - st.bounds[i][0]
        if room_lo > 0:
            w[i] = lo[i] - min(0.25 * T, 0.5 * room_lo)
        else:
            w[i] = hi[i] + min(0.25 * T, 0.5 * (st.bounds[i][1] - hi[i]))
        return Decision(False, "exact", witness=w)
    pairs = [(a, b) for a in prims for b in prims if a is not b and _meets_margin(st, a, b) > 0]
    if reg.is_diamond_union and st.dim == 2 and st.chart == "minkowski_box":
        rects = [_null_rect(d) for d in prims]
        for a, b in pairs:
            target = _null_rect(Diamond(a.p, b.q))
            if not _rect_union_covers(target, rects):
                return Decision(False, "exact", witness=(a, b))
        return Decision(True, "exact")
    rng = np.random.default_rng(seed)
    for a, b in pairs:
        if isinstance(a, Diamond) and isinstance(b, Diamond):
            # contained in a single member: p_k <= p_a and q_b <= q_k
            if any(relation(st, d.p, a.p).causal and relation(st, b.q, d.q).causal for d in reg.diamonds()):
                continue
        cand = _sample_between(st, a, b, density, rng)
        cand = cand[_in_chart(st, cand)]
        one_a = CausalRegion(st, (a,))
        one_b = CausalRegion(st, (b,))
        mask = in_causal_future(one_a, cand) & _in_causal_past(one_b, cand)
        bad = cand[mask & ~reg.contains(cand)]
        if len(bad):
            return Decision(False, "sampled", witness=bad[0], density=density)
    return Decision(True, "sampled", density=density)


def _in_causal_past(reg: CausalRegion, points) -> np.ndarray:
    st = reg.st
    pts = np.asarray(points, dtype=float)
    out = np.zeros(pts.shape[:-1], dtype=bool)
    for pr in reg.primitives:
        t, lo, hi = _top(st, pr)
        flat = _reduce(st, pts.reshape(-1, st.dim))
        res = np.array([t - x[0] - _interval_gap(st, x[1:], x[1:], lo, hi) > 0 for x in flat])
        out |= res.reshape(pts.shape[:-1])
    return out


def in_causal_past(reg: CausalRegion, points) -> np.ndarray:
    return _in_causal_past(reg, points)


# Loc morphisms ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LocMorphism:
    """Translation by ``shift`` followed by inclusion into ``target``.

    ``source`` is either a whole spacetime (a slab or box chart of the same
    flat geometry) or a region of ``target`` regarded as a spacetime in its
    own right.  ``image`` is the image region in ``target``.
    """

    source: object
    target: Spacetime
    shift: tuple
    image: CausalRegion
    checks: dict = field(default_factory=dict)


def _as_fraction_tuple(shift, dim):
    if shift is None:
        shift = [0] * dim
    if len(shift) != dim:
        raise ValueError("shift needs one entry per coordinate")
    return tuple(Fraction(s).limit_denominator(10**12) if not isinstance(s, Fraction) else s for s in shift)


def loc_morphism(source, target: Spacetime, shift=None, n_check: int = 20, seed: int = 0) -> LocMorphism:
    """Build and validate a translation-inclusion morphism."""
    require_supported(target)
    sh = _as_fraction_tuple(shift, target.dim)
    shf = np.array([float(s) for s in sh])
    if isinstance(source, CausalRegion):
        if source.st.dim != target.dim:
            raise ValueError("dimension mismatch")
        src_st = source.st
        image = CausalRegion(target, source.translate(shf).primitives)
    elif isinstance(source, Spacetime):
        require_supported(source)
        src_st = source
        image = _spacetime_image(source, target, shf)
    else:
        raise TypeError("source must be a Spacetime or a CausalRegion")
    rng = np.random.default_rng(seed)
    pts = image.sample(n_check, rng) - shf
    pts_src = _reduce(src_st, pts)
    g_src = src_st.metric_values(pts_src)
    g_tgt = target.metric_values(_reduce(target, pts + shf))
    metric_res = float(np.abs(g_src - g_tgt).max())
    if metric_res > 1e-10:
        raise InvariantViolation(f"pullback metric differs from source metric by {metric_res:.2e}")
    T = src_st.time_orientation_values(pts_src)
    norms = np.einsum("...a,...ab,...b->...", T, g_tgt, T)
    if np.any(norms >= 0) or np.any(T[..., 0] <= 0):
        raise InvariantViolation("time orientation is not preserved")
    conv = causally_convex(image, density=60)
    if not conv:
        raise InvariantViolation("image of a Loc morphism must be causally convex")
    return LocMorphism(source, target, sh, image, {"metric_residual": metric_res, "convexity": conv.method})


def _spacetime_image(source: Spacetime, target: Spacetime, shf: np.ndarray) -> CausalRegion:
    t0, t1 = source.bounds[0]
    if source.chart == "torus_slab":
        if target.chart != "torus_slab" or tuple(source.periods[1:]) != tuple(target.periods[1:]):
            raise UnsupportedBackground("a torus slab only embeds into a torus slab with the same circumferences")
        return CausalRegion(target, (TimeSlab(t0 + shf[0], t1 + shf[0]),))
    lo = np.array([b[0] for b in source.bounds]) + shf
    hi = np.array([b[1] for b in source.bounds]) + shf
    return CausalRegion(target, (CoordBox(tuple(lo), tuple(hi)),))


def _covers_slice(st: Spacetime, prims, t: float) -> bool:
    """Whether the primitives active at time t cover {t} × Σ (boxes and slabs only)."""
    L = _periods(st)
    active = []
    for pr in prims:
        lo, hi = _box_arrays(st, pr)
        if lo[0] < t < hi[0]:
            active.append((lo[1:], hi[1:]))
    if not active:
        return False
    # per-axis compression over the fundamental domain
    cuts = []
    for i, Li in enumerate(L):
        c = {0.0, Li}
        for lo, hi in active:
            if np.isfinite(lo[i]):
                c |= {float(np.mod(lo[i], Li)), float(np.mod(hi[i], Li))}
        cuts.append(sorted(c))
    for cell in itertools.product(*[range(len(c) - 1) for c in cuts]):
        mid = np.array([0.5 * (cuts[i][k] + cuts[i][k + 1]) for i, k in enumerate(cell)])
        pt = np.concatenate([[t], mid])[None]
        if not any(primitive_contains(st, pr, pt)[0] for pr in prims):
            return False
    # cut points themselves
    for i, c in enumerate(cuts):
        for x in c[:-1]:
            for cell in itertools.product(*[range(len(cc) - 1) for j, cc in enumerate(cuts) if j != i]):
                mid = [0.5 * (cuts[j][k] + cuts[j][k + 1]) for j, k in zip([j for j in range(len(cuts)) if j != i], cell)]
                mid.insert(i, x)
                pt = np.concatenate([[t], mid])[None]
                if not any(primitive_contains(st, pr, pt)[0] for pr in prims):
                    return False
    return True


def is_cauchy_morphism(f: LocMorphism) -> bool:
    """Whether the image contains a full slice {t} × Σ of the target slab."""
    st = f.target
    if st.chart != "torus_slab" or not all(st.is_periodic(i) for i in range(1, st.dim)):
        raise UnsupportedBackground("Cauchy morphisms are decided only for slabs with compact slices")
    prims = f.image.primitives
    L = _periods(st)
    rho = 0.5 * float(np.linalg.norm(L))  # farthest distance on the torus
    for pr in prims:
        if isinstance(pr, Diamond):
            if pr.q[0] - pr.p[0] > 2 * rho:
                return True
        else:
            lo, hi = _box_arrays(st, pr)
            if not np.isfinite(lo[1:]).any():
                return True
    boxes = [pr for pr in prims if not isinstance(pr, Diamond)]
    if not boxes:
        return False
    times = sorted({float(_box_arrays(st, pr)[k][0]) for pr in boxes for k in (0, 1)})
    cands = [0.5 * (a + b) for a, b in zip(times, times[1:])] + times
    return any(_covers_slice(st, boxes, t) for t in cands)


def require_cauchy(f: LocMorphism) -> None:
    if not is_cauchy_morphism(f):
        raise NotCauchy("image contains no Cauchy surface of the target")


# Alexandrov refinement ------------------------------------------------------------------

def _box_inradius(st, box: CoordBox, c: np.ndarray) -> float:
    """Largest r with the diamond of half-height r centred at c inside the box."""
    lo, hi = _box_arrays(st, box)
    r = min(c[0] - lo[0], hi[0] - c[0])
    for i in range(1, st.dim):
        if np.isfinite(lo[i]):
            r = min(r, c[i] - lo[i], hi[i] - c[i])
    return float(r)


def alexandrov_refinement(st: Spacetime, boxes: Sequence[CoordBox], density: int = DEFAULT_DENSITY,
                          candidates: int = 11) -> list[Diamond]:
    """Diamonds, each inside some input box, covering the boxes' sample grid.

    Greedy: the first uncovered grid point is covered by the largest diamond
    inside one of the boxes whose centre lies on the segment from the point
    to that box's centre.  The grid has ``density`` cell-centred points per
    dimension in each box.
    """
    require_supported(st)
    if not boxes:
        raise EmptyCover("the cover has no members")
    boxes = list(boxes)
    CausalRegion(st, tuple(boxes))  # chart checks
    grid = coverage_grid(st, boxes, density)
    covered = np.zeros(len(grid), dtype=bool)
    out: list[Diamond] = []
    centres = [0.5 * (np.array(b.lo) + np.array(b.hi)) for b in boxes]
    order = np.argsort(np.abs(grid - np.mean(centres, axis=0)).sum(axis=1))
    for k in order:
        if covered[k]:
            continue
        x = grid[k]
        best, best_r = None, 0.0
        for b, c in zip(boxes, centres):
            if not primitive_contains(st, b, x[None])[0]:
                continue
            for lam in np.linspace(1.0, 0.0, candidates):
                cc = x + lam * (c - x)
                r = _box_inradius(st, b, cc)
                dt, dx = abs(x[0] - cc[0]), np.linalg.norm(x[1:] - cc[1:])
                if dt + dx < r * (1 - 1e-9) and r > best_r:
                    best, best_r = cc, r
        if best is None:
            raise InvariantViolation("grid point lies in no box")
        d = diamond_around(best, best_r)
        out.append(d)
        covered |= primitive_contains(st, d, grid)
        covered[k] = True
    return out


def coverage_grid(st: Spacetime, boxes: Sequence[CoordBox], density: int) -> np.ndarray:
    pts = []
    for b in boxes:
        lo, hi = np.array(b.lo), np.array(b.hi)
        axes = [lo[i] + (np.arange(density) + 0.5) * (hi[i] - lo[i]) / density for i in range(st.dim)]
        pts.append(np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, st.dim))
    return np.vstack(pts)


def check_refinement(st: Spacetime, boxes: Sequence[CoordBox], diamonds: Sequence[Diamond],
                     density: int = DEFAULT_DENSITY) -> dict:
    """Containment of each diamond in some box and coverage of the sample grid."""
    inside = []
    for d in diamonds:
        lo, hi = diamond_bbox(d)
        inside.append(any(np.all(lo >= np.array(b.lo) - 1e-12) and np.all(hi <= np.array(b.hi) + 1e-12)
                          for b in boxes))
    grid = coverage_grid(st, boxes, density)
    cov = np.zeros(len(grid), dtype=bool)
    for d in diamonds:
        cov |= primitive_contains(st, d, grid)
    return {"contained": bool(all(inside)), "covered_fraction": float(cov.mean()),
            "uncovered": grid[~cov][:5], "density": density}


# -- verification rows ----------------------------------------------------------

def _random_tilted_diamond(rng, dim, spread):
    p = np.concatenate([[rng.uniform(-0.5, 0.5)], rng.uniform(-spread, spread, dim - 1)])
    T = rng.uniform(0.5, 1.8)
    v = rng.normal(size=dim - 1)
    v *= rng.uniform(0, 0.9) * T / np.linalg.norm(v)
    return Diamond(tuple(p), tuple(p + np.concatenate([[T], v])))


def _crossing_pair(rng):
    # two disjoint diamonds whose futures reach each other, perturbed
    p1, q1 = np.array([0, 1.0, 0, 0]), np.array([1.8, 0, 1.0, 0])
    p2, q2 = np.array([0, -1.0, 0, 0]), np.array([1.8, 0, -1.0, 0])
    return [Diamond(tuple(p + rng.normal(0, 0.15, 4)), tuple(q + rng.normal(0, 0.15, 4))) for p, q in ((p1, q1), (p2, q2))]


def _chronological_tilt_ok(d) -> bool:
    v = np.subtract(d.q, d.p)
    return v[0] > np.linalg.norm(v[1:]) + 0.05


def _near_null(st, ds, cut) -> bool:
    return any(abs(_meets_margin(st, a, b)) < cut for a in ds for b in ds if a is not b)


def _disjointness_rows(instances, rng, cut):
    from . import oracles as O
    from .geometry import minkowski, torus_slab
    from .reports import Row

    rows = []
    for name, st, periods in (("minkowski2", minkowski(2), None),
                              ("torus2", torus_slab(2, (-1.0, 2.0), 10.0), [10.0])):
        bad = checked = skipped = 0
        while checked < instances:
            ds = []
            for _ in range(2):
                c = np.array([rng.uniform(-0.2, 1.2), rng.uniform(0, 10) if periods else rng.uniform(-3, 3)])
                ds.append(diamond_around(c, rng.uniform(0.1, 0.6)))
            if _near_null(st, ds, cut):
                skipped += 1
                continue
            crit = bool(causally_disjoint(region(st, ds[0]), region(st, ds[1])))
            orc = O.sampled_disjoint((ds[0].p, ds[0].q), (ds[1].p, ds[1].q), n=300, rng=rng, periods=periods)
            bad += crit != orc
            checked += 1
        rows.append(Row(f"causal.disjointness.{name}",
                        f"two-point criterion vs sampled oracle on {checked} diamond pairs ({skipped} near-null skipped)",
                        "causal disjointness of diamonds", float(bad), 0.0))
    return rows


def _time_order_rows(instances, rng, cut):
    from . import oracles as O
    from .geometry import minkowski
    from .reports import Row

    rows = []
    for name, dim, k, spread in (("minkowski2.triples", 2, 3, 2.0), ("minkowski4.pairs", 4, 2, 1.2)):
        st = minkowski(dim)
        bad = checked = cycles = 0
        while checked < instances:
            if dim == 4 and rng.uniform() < 0.3:
                ds = _crossing_pair(rng)
                if not all(_chronological_tilt_ok(d) for d in ds):
                    continue
            else:
                ds = [_random_tilted_diamond(rng, dim, spread) for _ in range(k)]
            regs = [region(st, d) for d in ds]
            if any(regions_overlap(a, b) for a, b in itertools.combinations(regs, 2)) or _near_null(st, ds, cut):
                continue
            meets = [[i != j and O.sampled_future_meets((ds[i].p, ds[i].q), (ds[j].p, ds[j].q), n=200, rng=rng)
                      for j in range(k)] for i in range(k)]
            valid = O.brute_time_orders(meets, k)
            mine = [p for p in itertools.permutations(range(k)) if check_time_order(regs, list(p))]
            try:
                perm = time_order_permutation(regs, check_overlap=False)
                found = tuple(perm) in valid
            except NotTimeOrderable:
                found = not valid
                cycles += 1
            bad += (mine != valid) or not found
            checked += 1
        rows.append(Row(f"causal.time_order.{name}",
                        f"orderings vs brute force over permutations, {checked} tuples ({cycles} not orderable)",
                        "time-orderable tuples", float(bad), 0.0))
    return rows


def _refinement_rows(density):
    from .geometry import minkowski
    from .reports import Row

    st = minkowski(2)
    rows = []
    for name, boxes in (("unit_box", [CoordBox((0, 0), (1, 1))]),
                        ("two_boxes", [CoordBox((0, 0), (1, 2)), CoordBox((1, -0.5), (1.5, 0.5))])):
        ds = alexandrov_refinement(st, boxes, density=density)
        rep = check_refinement(st, boxes, ds, density=density)
        res = (1.0 - rep["covered_fraction"]) + (0.0 if rep["contained"] else 1.0)
        rows.append(Row(f"causal.refinement.{name}",
                        f"uncovered fraction of a {density}^2 grid by {len(ds)} diamonds inside the cover",
                        "refinement of an open cover by diamonds", float(res), 0.0))
    return rows


def verify_causal(instances: int = 1000, seed: int = 0, density: int = DEFAULT_DENSITY,
                  order_instances: int | None = None, near_null: float = 0.02) -> list:
    """Causal disjointness, time ordering and refinement, each against a brute-force oracle."""
    rng = np.random.default_rng(seed)
    if order_instances is None:
        order_instances = instances
    return (_disjointness_rows(instances, rng, near_null) + _time_order_rows(order_instances, rng, near_null)
            + _refinement_rows(density))
