"""Retarded and advanced Green operators on flat torus slabs.

On a flat slab ``(a, b) x T^k`` in Cartesian coordinates the normally
hyperbolic operators of the complex act componentwise as
``P = d_t^2 - Laplacian``.  A source is expanded in spatial Fourier modes
(an FFT on a uniform grid) and each mode is propagated exactly by Duhamel's
formula with the kernel ``K(tau) = sin(w tau) / w`` (``tau`` when ``w = 0``).

Writing ``K(t - s) = sum_i phi_i(t) psi_i(s)`` turns the Duhamel integral
into cumulative integrals ``M_i(t) = int_lo^t psi_i(s) c_k(s) ds``.  These
are built once per source from Gauss-Legendre panels (the antiderivative of
each panel's Legendre interpolant), refined until successive levels agree.
Time derivatives at an output point come from the source's own time jets,
so the returned fields carry exact Taylor coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import legendre as Leg
from scipy.integrate import quad_vec

from . import fields as F
from . import geometry as G
from . import jets as J
from .complex import GradedSection, Support, apply_q, apply_w, integrate
from .errors import (CutoffOutsideImage, ModeCutoffTooLow, QuadratureDivergence, SupportTooCloseToBoundary,
                     UnsupportedBackground)

DIRECTIONS = ("retarded", "advanced")
TAIL_TOL = 1e-12


# -- handles --------------------------------------------------------------------------

@dataclass(frozen=True)
class GreenOperator:
    """Immutable handle: a flat torus slab, a direction and a spatial mode cutoff.

    ``modes[i]`` is the cutoff along spatial axis i; 0 declares that sources
    do not depend on that coordinate.
    """

    st: G.Spacetime
    direction: str = "retarded"
    modes: tuple = (64,)
    tol: float = 1e-10
    nodes: int = 24
    panels: int = 4
    max_level: int = 8
    boundary_margin: float = 0.0

    def __post_init__(self):
        if self.st.chart != "torus_slab":
            raise UnsupportedBackground("Green operators are implemented on flat torus slabs only")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        m = tuple(int(v) for v in np.broadcast_to(np.asarray(self.modes), (self.st.dim - 1,)))
        object.__setattr__(self, "modes", m)
        if any(v < 0 for v in m):
            raise ValueError("mode cutoffs must be non-negative")

    @property
    def lengths(self) -> tuple:
        return tuple(self.st.periods[1:])

    def opposite(self) -> "GreenOperator":
        other = "advanced" if self.direction == "retarded" else "retarded"
        return GreenOperator(self.st, other, self.modes, self.tol, self.nodes, self.panels, self.max_level,
                             self.boundary_margin)

    def apply_field(self, f, support: Support) -> F.DerivedField:
        """G applied to one compactly supported field (componentwise)."""
        prop = _ModePropagator(self, f, support)
        return F.DerivedField(f.valence, prop.jets, f.dim, f"G{self.direction[0]}({f.name})")

    def apply(self, s: GradedSection) -> GradedSection:
        if s.support is None:
            raise ValueError("Green operators act on compactly supported sections")
        parts = {n: self.apply_field(f, s.support) for n, f in s.parts.items()}
        return GradedSection(s.model, s.dim, parts, None)

    def __call__(self, s):
        return self.apply(s)


def green_pair(st: G.Spacetime, modes=(64,), **kw) -> tuple:
    ret = GreenOperator(st, "retarded", modes, **kw)
    return ret, ret.opposite()


# -- the per-source mode propagator -------------------------------------------------------------

class _ModePropagator:
    def __init__(self, op: GreenOperator, f, support: Support):
        self.op = op
        self.f = f
        self.st = op.st
        self.lo, self.hi = support.time_interval
        a, b = self.st.bounds[0]
        m = op.boundary_margin
        if self.lo < a + m or self.hi > b - m:
            raise SupportTooCloseToBoundary(
                f"source time support ({self.lo:g}, {self.hi:g}) is not inside ({a + m:g}, {b - m:g})")
        self.tshape = (f.dim,) * (f.valence[0] + f.valence[1])
        self._grid()
        self._built = False

    # spatial grid and wave numbers
    def _grid(self):
        Ls = self.op.lengths
        self.npts = [4 * n if n > 0 else 1 for n in self.op.modes]
        axes = [np.arange(n) * L / n for n, L in zip(self.npts, Ls)]
        self.grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(Ls))
        freqs = [np.fft.fftfreq(n, 1.0 / n) for n in self.npts]
        m = np.stack(np.meshgrid(*freqs, indexing="ij"), axis=-1).reshape(-1, len(Ls))
        keep = np.all(np.abs(m) <= np.asarray(self.op.modes), axis=-1)
        self.keep = keep
        self.k = 2 * np.pi * m[keep] / np.asarray(Ls)
        self.omega = np.linalg.norm(self.k, axis=-1)

    def _points(self, times) -> np.ndarray:
        t = np.repeat(np.asarray(times, dtype=float), len(self.grid))
        xs = np.tile(self.grid, (len(times), 1))
        return np.column_stack([t, xs])

    def _spectrum(self, vals: np.ndarray, check: bool = True) -> np.ndarray:
        """vals (S, ngrid, *T) -> mode coefficients (S, K, *T) with f = sum_k c_k e^{ik.x}."""
        S = vals.shape[0]
        shaped = vals.reshape((S,) + tuple(self.npts) + vals.shape[2:])
        axes = tuple(range(1, 1 + len(self.npts)))
        c = np.fft.fftn(shaped, axes=axes) / len(self.grid)
        c = c.reshape((S, len(self.grid)) + vals.shape[2:])
        if check:
            fmax = float(np.abs(vals).max()) if vals.size else 0.0
            tail = float(np.abs(c[:, ~self.keep]).max()) if (~self.keep).any() else 0.0
            if tail > TAIL_TOL * max(fmax, 1e-300):
                raise ModeCutoffTooLow(f"spectral tail {tail / fmax:.2e} above {TAIL_TOL:g} at cutoff {self.op.modes}")
        return c[:, self.keep]

    def _check_inactive(self, times):
        inactive = [i for i, n in enumerate(self.op.modes) if n == 0]
        if not inactive:
            return
        pts = self._points(times)
        off = pts.copy()
        for i in inactive:
            off[:, 1 + i] += 0.37 * self.op.lengths[i]
        a, b = self.f.values(pts), self.f.values(off)
        if np.abs(a - b).max() > TAIL_TOL * max(np.abs(a).max(), 1e-300):
            raise ModeCutoffTooLow("source depends on a coordinate declared mode-free (cutoff 0)")

    # kernel factorisation K(t - s) = sum_i phi_i(t) psi_i(s)
    def _psi(self, s: np.ndarray) -> np.ndarray:
        """(S,) -> (S, K, 2)."""
        w = self.omega
        ws = np.outer(s, w)
        zero = w == 0
        c0 = np.where(zero, 1.0, np.cos(ws))
        c1 = np.where(zero, s[:, None], np.sin(ws))
        return np.stack([c0, c1], axis=-1)

    def _phi_jets(self, t0: np.ndarray, order: int) -> np.ndarray:
        """Taylor coefficients of phi_i(t0 + e): (B, K, 2, order+1)."""
        w = self.omega
        B, K = len(t0), len(w)
        out = np.zeros((B, K, 2, order + 1))
        wt = np.outer(t0, w)
        safe = np.where(w == 0, 1.0, w)
        for n in range(order + 1):
            fac = w ** n / math.factorial(n) / safe
            out[:, :, 0, n] = fac * np.sin(wt + n * np.pi / 2)
            out[:, :, 1, n] = -fac * np.cos(wt + n * np.pi / 2)
        zero = w == 0
        out[:, zero, :, :] = 0.0
        out[:, zero, 0, 0] = t0[:, None]
        if order >= 1:
            out[:, zero, 0, 1] = 1.0
        out[:, zero, 1, 0] = -1.0
        return out

    def _psi_jets(self, t0: np.ndarray, order: int) -> np.ndarray:
        """Taylor coefficients of psi_i(t0 + e): (B, K, 2, order+1)."""
        w = self.omega
        B, K = len(t0), len(w)
        out = np.zeros((B, K, 2, order + 1))
        wt = np.outer(t0, w)
        for n in range(order + 1):
            fac = w ** n / math.factorial(n)
            out[:, :, 0, n] = fac * np.cos(wt + n * np.pi / 2)
            out[:, :, 1, n] = fac * np.sin(wt + n * np.pi / 2)
        zero = w == 0
        out[:, zero, :, :] = 0.0
        out[:, zero, 0, 0] = 1.0
        out[:, zero, 1, 0] = t0[:, None]
        if order >= 1:
            out[:, zero, 1, 1] = 1.0
        return out

    # cumulative integrals on Gauss-Legendre panels
    def _panels(self, a: np.ndarray, b: np.ndarray):
        """Antiderivative coefficients on panels [a_p, b_p]: (P, q+1, K, 2, T), tail sizes and sup |f|."""
        q = self.op.nodes
        x, w = Leg.leggauss(q)
        h = b - a
        s = (a[:, None] + (x[None, :] + 1) * h[:, None] / 2).reshape(-1)
        vals = self.f.values(self._points(s)).reshape((len(s), len(self.grid)) + self.tshape)
        c = self._spectrum(vals)
        T = int(np.prod(self.tshape)) if self.tshape else 1
        cf = c.reshape(len(s), len(self.k), T)
        integrand = self._psi(s)[:, :, :, None] * cf[:, :, None, :]  # (S, K, 2, T)
        integrand = integrand.reshape((len(a), q) + integrand.shape[1:])
        # Legendre coefficients per panel: a_n = (2n+1)/2 sum_j w_j f_j P_n(x_j)
        V = Leg.legvander(x, q - 1)
        coef = np.einsum("j,jn,pj...->pn...", w, V, integrand)
        coef *= ((2 * np.arange(q) + 1) / 2)[None, :, None, None, None]
        tail = np.abs(coef[:, -3:]).reshape(len(a), -1).max(axis=1)
        # antiderivative in the local variable, zero at the left edge, scaled by h/2
        anti = Leg.legint(coef, m=1, lbnd=-1, axis=1) * (h / 2)[:, None, None, None, None]
        return anti, tail, float(np.abs(vals).max()) if vals.size else 0.0

    def _build(self):
        """Adaptive panels: split any panel whose Legendre tail exceeds tol * sup|f|."""
        if self._built:
            return
        self._check_inactive(np.linspace(self.lo, self.hi, 5))
        edges = np.linspace(self.lo, self.hi, self.op.panels + 1)
        a, b = edges[:-1], edges[1:]
        anti, tail, fmax = self._panels(a, b)
        done_a, done_b, done_anti = [], [], []
        for _ in range(self.op.max_level + 1):
            ok = tail <= self.op.tol * max(fmax, 1e-300)
            done_a.append(a[ok])
            done_b.append(b[ok])
            done_anti.append(anti[ok])
            if ok.all():
                break
            mid = 0.5 * (a[~ok] + b[~ok])
            a, b = np.concatenate([a[~ok], mid]), np.concatenate([mid, b[~ok]])
            anti, tail, fm = self._panels(a, b)
            fmax = max(fmax, fm)
        else:
            raise QuadratureDivergence(f"time quadrature did not reach {self.op.tol:g} "
                                       f"after {self.op.max_level} refinements")
        a = np.concatenate(done_a)
        order = np.argsort(a)
        self.edges = np.append(a[order], self.hi)
        self.anti = np.concatenate(done_anti)[order]
        ends = self.anti.sum(axis=1)  # P_n(1) = 1
        self.offsets = np.concatenate([np.zeros((1,) + ends.shape[1:], dtype=ends.dtype), np.cumsum(ends, axis=0)])
        self.total = self.offsets[-1]
        self.fmax = fmax
        self.npanels = len(a)
        self._built = True

    def cumulative(self, t: np.ndarray) -> np.ndarray:
        """M_i(t) for the stored source: (B, K, 2, T)."""
        self._build()
        tc = np.clip(t, self.lo, self.hi)
        p = np.clip(np.searchsorted(self.edges, tc, side="right") - 1, 0, len(self.edges) - 2)
        a, b = self.edges[p], self.edges[p + 1]
        u = 2 * (tc - a) / (b - a) - 1
        P = Leg.legvander(u, self.anti.shape[1] - 1)  # (B, q+1)
        return self.offsets[p] + np.einsum("bn,bn...->b...", P, self.anti[p])

    # output
    def jets(self, points, order: int) -> J.JetArray:
        points = self.st.check_points(points)
        batch = points.shape[:-1]
        pts = points.reshape(-1, points.shape[-1])
        # the time series depend on t0 only; quadrature grids share few distinct times
        times, inv = np.unique(pts[:, 0], return_inverse=True)
        series = np.concatenate([self._time_series(times[k:k + 32], order) for k in range(0, len(times), 32)])
        ctx = J.context(self.st.dim, order)
        out = []
        for k in range(0, len(pts), 64):
            out.append(self._spatial_sum(pts[k:k + 64], series[inv[k:k + 64]], ctx))
        data = np.concatenate(out, axis=0)
        return J.JetArray(data.reshape(batch + data.shape[1:]), ctx, order)

    def _source_time_jets(self, t0: np.ndarray, order: int) -> np.ndarray:
        """Time Taylor coefficients of the mode coefficients c_k at t0: (B, K, T, order+1)."""
        B = len(t0)
        T = int(np.prod(self.tshape)) if self.tshape else 1
        inside = (t0 > self.lo) & (t0 < self.hi)
        out = np.zeros((B, len(self.k), T, order + 1), dtype=complex)
        if order < 0 or not inside.any():
            return out
        ti = t0[inside]
        jet = self.f.jets(self._points(ti), order)
        coeffs = jet.data[..., jet.ctx.time_only]  # (n*grid, *T, order+1)
        coeffs = coeffs.reshape((len(ti), len(self.grid), T, order + 1))
        c = np.stack([self._spectrum(coeffs[..., j], check=False) for j in range(order + 1)], axis=-1)
        out[inside] = c
        return out

    def _time_series(self, t0: np.ndarray, order: int) -> np.ndarray:
        """Taylor coefficients in e of every mode amplitude u_k(t0 + e): (B, K, T, order+1)."""
        T = int(np.prod(self.tshape)) if self.tshape else 1
        M0 = self.cumulative(t0)  # (B, K, 2, T)
        # advanced: int_t^hi K(s - t) c ds = -int_t^hi K(t - s) c ds = sum_i phi_i (M_i(t) - M_i(hi))
        if self.op.direction == "advanced":
            M0 = M0 - self.total[None]
        # Taylor series of M_i(t0 + e) = M_i(t0) + int_0^e psi_i c
        Mser = np.zeros(M0.shape + (order + 1,), dtype=complex)
        Mser[..., 0] = M0
        if order >= 1:
            cj = self._source_time_jets(t0, order - 1)  # (B, K, T, order)
            pj = self._psi_jets(t0, order - 1)  # (B, K, 2, order)
            prod = np.zeros(pj.shape[:3] + (T, order), dtype=complex)
            for a in range(order):
                for b in range(order - a):
                    prod[..., a + b] += pj[:, :, :, None, a] * cj[:, :, None, :, b]
            for n in range(order):
                Mser[..., n + 1] = prod[..., n] / (n + 1)
        phi = self._phi_jets(t0, order)  # (B, K, 2, order+1)
        u = np.zeros((len(t0), len(self.k), T, order + 1), dtype=complex)
        for a in range(order + 1):
            for b in range(order + 1 - a):
                u[..., a + b] += np.einsum("bki,bkit->bkt", phi[..., a], Mser[..., b])
        return u

    def _spatial_sum(self, pts: np.ndarray, u: np.ndarray, ctx) -> np.ndarray:
        """sum_k u_k(t) e^{ik.x} as jets around ``pts`` (real part)."""
        uj = J.time_series_embed(u, ctx, ctx.order)  # (B, K, T) jets, first variable = t
        coords = J.coordinates(pts, ctx)
        arg = None
        for i in range(self.st.dim - 1):
            term = coords[1 + i][:, None] * self.k[None, :, i]
            arg = term if arg is None else arg + term
        if arg is None:
            arg = J.zeros((len(pts), len(self.k)), ctx)
        wave = J.JetArray(J.cos(arg).data + 1j * J.sin(arg).data, ctx)
        res = J.einsum("kt,k->t", uj, wave)
        return np.real(res.data).reshape((len(pts),) + self.tshape + (ctx.size,))

    # independent check: adaptive Gauss-Kronrod on the full Duhamel integral
    def reference_values(self, points, epsabs: float = 1e-13) -> np.ndarray:
        pts = self.st.check_points(points)
        out = []
        T = int(np.prod(self.tshape)) if self.tshape else 1
        w = self.omega
        safe = np.where(w == 0, 1.0, w)
        for p in pts:
            t0 = p[0]
            if self.op.direction == "retarded":
                a, b = self.lo, min(t0, self.hi)
            else:
                a, b = max(t0, self.lo), self.hi
            if b <= a:
                out.append(np.zeros(self.tshape))
                continue

            def integrand(s):
                vals = self.f.values(self._points([s])).reshape((1, len(self.grid)) + self.tshape)
                c = self._spectrum(vals, check=False)[0].reshape(len(w), T)
                tau = t0 - s if self.op.direction == "retarded" else s - t0
                ker = np.where(w == 0, tau, np.sin(w * tau) / safe)
                phase = np.exp(1j * (self.k @ p[1:]))
                v = np.einsum("k,kt,k->t", ker, c, phase)
                return np.concatenate([v.real, v.imag])

            val, _ = quad_vec(integrand, a, b, epsabs=epsabs, epsrel=1e-13, norm="max")
            out.append(val[:T].reshape(self.tshape))
        return np.array(out)


def reference_values(op: GreenOperator, f, support: Support, points) -> np.ndarray:
    """G applied by scipy's adaptive vector quadrature (an independent scheme)."""
    return _ModePropagator(op, f, support).reference_values(points)


# -- propagators and homotopies --------------------------------------------------------------

def propagators(op: GreenOperator, s: GradedSection) -> dict:
    """{'G': G+ s - G- s, 'G_D': (G+ s + G- s) / 2} for a handle of either direction."""
    ret = op if op.direction == "retarded" else op.opposite()
    adv = ret.opposite()
    gp, gm = ret.apply(s), adv.apply(s)
    return {"G": gp - gm, "G_D": (gp + gm).scaled(0.5), "G+": gp, "G-": gm}


def propagate_field(op: GreenOperator, f, support: Support, kind: str = "G") -> F.DerivedField:
    ret = op if op.direction == "retarded" else op.opposite()
    gp, gm = ret.apply_field(f, support), ret.opposite().apply_field(f, support)
    if kind == "G":
        return gp - gm
    if kind == "G_D":
        return (gp + gm).scaled(0.5)
    if kind == "G+":
        return gp
    if kind == "G-":
        return gm
    raise ValueError(f"unknown propagator {kind!r}")


def homotopy(op: GreenOperator, s: GradedSection, kind: str = "retarded") -> GradedSection:
    """Lambda_+ = W G+, Lambda_- = W G-, Lambda = W G, Lambda_D = W G_D."""
    st = op.st
    props = propagators(op, s)
    key = {"retarded": "G+", "advanced": "G-", "causal": "G", "dirac": "G_D"}[kind]
    return apply_w(st, props[key])


def homotopy_residual(op: GreenOperator, s: GradedSection, points, kind: str = "retarded") -> float:
    """max |Q Lambda s + Lambda Q s - s| at ``points`` (the Lambda-trivialisation of the inclusion)."""
    st = op.st
    lhs = apply_q(st, homotopy(op, s, kind)) + homotopy(op, apply_q(st, s), kind)
    worst = 0.0
    for n in set(lhs.parts) | set(s.parts):
        a = lhs.parts[n].values(points) if n in lhs.parts else 0.0
        b = s.parts[n].values(points) if n in s.parts else 0.0
        worst = max(worst, float(np.abs(np.asarray(a) - np.asarray(b)).max()))
    return worst


# -- the wave operator and pairings on the slab -------------------------------------------------

def wave(st: G.Spacetime, f) -> F.DerivedField:
    """d_t^2 - Laplacian, componentwise (P on a flat Cartesian slab)."""

    def jets_fn(points, order):
        j = f.jets(points, order + 2)
        out = j.diff(0).diff(0)
        for i in range(1, st.dim):
            out = out - j.diff(i).diff(i)
        if out.ctx.order > order:
            out = out.truncate(J.context(st.dim, order))
        return out

    return F.DerivedField(f.valence, jets_fn, f.dim, f"P({f.name})")


def field_pairing(st: G.Spacetime, f1, f2, box: Support, nodes: int = 48, periodic_nodes: int = 0,
                  check: bool = True, tol: float = 1e-8) -> tuple:
    """(int of the componentwise product f1 . f2 over ``box``, scale).

    Axes of ``box`` that span a full period use the periodic trapezoid rule
    when ``periodic_nodes`` is positive.  The error estimate compares rules
    with one node fewer per axis.
    """
    (val, scale), = field_pairings(st, f1, [f2], box, nodes, periodic_nodes, check, tol)
    return val, scale


def field_pairings(st: G.Spacetime, f1, others, box: Support, nodes: int = 48, periodic_nodes: int = 0,
                   check: bool = True, tol: float = 1e-8) -> list:
    """``field_pairing`` of f1 against each field in ``others``, evaluating f1 once per rule."""
    rules = [(nodes, periodic_nodes)]
    if check:
        rules.append((nodes - 1, max(periodic_nodes - 1, 0)))
    results = []
    for n, m in rules:
        pts, ww = _box_rule(st, box, n, m)
        a = f1.values(pts).reshape(len(pts), -1)
        row = []
        for f2 in others:
            b = f2.values(pts).reshape(len(pts), -1)
            row.append((float(ww @ np.sum(a * b, axis=-1)), float(np.abs(a).max()), float(np.abs(b).max()),
                        float(ww.sum())))
        results.append(row)
    out = []
    for j, (val, sa, sb, vol) in enumerate(results[0]):
        scale = sa * sb * vol
        if check:
            coarse = results[1][j][0]
            if abs(val - coarse) > tol * max(scale, 1e-300) and abs(val - coarse) > 1e-14:
                raise QuadratureDivergence(f"slab pairing error estimate {abs(val - coarse):.2e} (scale {scale:.2e})")
        out.append((val, scale))
    return out


def _box_rule(st, box: Support, nodes: int, periodic_nodes: int) -> tuple:
    axes, wts = [], []
    x, w = Leg.leggauss(nodes)
    for i in range(box.dim):
        lo, hi = box.lo[i], box.hi[i]
        if not box.active[i]:
            axes.append(np.array([0.5 * (lo + hi)]))
            wts.append(np.array([hi - lo]))
        elif periodic_nodes and st.is_periodic(i) and abs((hi - lo) - st.periods[i]) < 1e-12:
            axes.append(lo + np.arange(periodic_nodes) * (hi - lo) / periodic_nodes)
            wts.append(np.full(periodic_nodes, (hi - lo) / periodic_nodes))
        else:
            axes.append(lo + (hi - lo) * (x + 1) / 2)
            wts.append(w * (hi - lo) / 2)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.dim)
    ww = np.ones(1)
    for wi in wts:
        ww = np.multiply.outer(ww, wi)
    return pts, ww.reshape(-1)


def mode_solution(st: G.Spacetime, k, phase: float = 0.0, kind: str = "scalar") -> F.TensorField:
    """u = cos(k . x) cos(|k| t + phase), a solution of P u = 0."""
    k = np.asarray(k, dtype=float)
    w = float(np.linalg.norm(k))

    def u(x):
        arg = 0.0
        for i in range(len(k)):
            arg = arg + k[i] * x[1 + i]
        return J.cos(arg) * J.cos(x[0] * w + phase)

    return F.make(kind, u, st.dim, "mode")


# -- sources ---------------------------------------------------------------------------------------

def bump_source(st: G.Spacetime, center, halfwidths, power: int = 20, amplitude=1.0, kind: str = "scalar",
                spatial_modes=None, active=None) -> tuple:
    """(field, support): amplitude * box bump, optionally times cos/sin spatial modes.

    ``spatial_modes`` is a list of (coefficient, wave vector, phase) added
    inside the bump envelope as ``sum c cos(k.x + phase)``.
    """
    from .complex import box_support

    dim = st.dim
    act = tuple(active) if active is not None else (True,) * dim
    hw = np.where(act, np.asarray(halfwidths, dtype=float), np.inf)
    env = F.box_bump(center, hw, power)
    amp = np.asarray(amplitude, dtype=float)

    def f(x):
        e = env(x)
        if spatial_modes:
            s = 0.0
            for c, k, ph in spatial_modes:
                arg = ph
                for i in range(len(k)):
                    arg = arg + k[i] * x[1 + i]
                s = s + c * J.cos(arg)
            e = e * s
        if amp.ndim == 0:
            return e * float(amp)
        return F._mul_nested(amp, e)

    return F.make(kind, f, dim, "bump"), box_support(center, halfwidths, st, act)


def time_bump_mode(st: G.Spacetime, t_center: float, t_half: float, k, power: int = 20, phase: float = 0.0,
                   amplitude=1.0, kind: str = "scalar") -> tuple:
    """bump(t) * cos(k . x + phase): a single spatial mode, compact in time only."""
    from .complex import Support

    k = np.asarray(k, dtype=float)
    amp = np.asarray(amplitude, dtype=float)

    def f(x):
        b = F.bump((x[0] - t_center) / t_half, power)
        arg = phase
        for i in range(len(k)):
            arg = arg + k[i] * x[1 + i]
        e = b * J.cos(arg)
        if amp.ndim == 0:
            return e * float(amp)
        return F._mul_nested(amp, e)

    lo = [t_center - t_half] + [st.bounds[i][0] for i in range(1, st.dim)]
    hi = [t_center + t_half] + [st.bounds[i][1] for i in range(1, st.dim)]
    active = (True,) + tuple(bool(abs(v) > 0) for v in k)
    return F.make(kind, f, st.dim, "time_bump_mode"), Support(lo, hi, active)


# -- time-slice reduction ---------------------------------------------------------------------------

def smoothstep(u, order: int = 6):
    """C^order polynomial step: 0 at u <= 0, 1 at u >= 1."""
    k = order
    # u^(k+1) * sum_j C(k+j, j) C(2k+1, k-j) (-u)^j
    acc = 0.0
    upow = 1.0
    for j in range(k + 1):
        acc = acc + math.comb(k + j, j) * math.comb(2 * k + 1, k - j) * ((-1.0) ** j) * upow
        upow = upow * u
    return acc * (u ** (k + 1))


@dataclass(frozen=True)
class TemporalCutoff:
    """chi(t) = 1 for t <= t_minus, 0 for t >= t_plus, polynomial in between."""

    t_minus: float
    t_plus: float
    order: int = 6

    def __post_init__(self):
        if not self.t_plus > self.t_minus:
            raise ValueError("need t_minus < t_plus")

    def __call__(self, t):
        u = (t - self.t_minus) * (1.0 / (self.t_plus - self.t_minus))
        u0 = J.base(u)
        mid = 1.0 - smoothstep(u, self.order)
        if isinstance(u, J.JetArray):
            one = J.const(1.0, u.ctx, u.shape)
            zero = J.const(0.0, u.ctx, u.shape)
            return J.where(u0 <= 0, one, J.where(u0 >= 1, zero, mid))
        return np.where(u0 <= 0, 1.0, np.where(u0 >= 1, 0.0, mid))


def multiply_by_cutoff(chi: TemporalCutoff, f, complement: bool = False) -> F.DerivedField:
    """chi * f (or (1 - chi) * f) as a derived field, with exact jets."""

    def jets_fn(points, order):
        j = f.jets(points, order)
        ctx = J.context(points.shape[-1], order)
        t = J.coordinates(points, ctx)[0]
        c = chi(t)
        if complement:
            c = 1.0 - c
        return _scale_jets(j, c)

    return F.DerivedField(f.valence, jets_fn, f.dim, f"chi*{f.name}")


def _scale_jets(j: J.JetArray, c: J.JetArray) -> J.JetArray:
    extra = j.ndim - c.ndim
    cd = c.data.reshape(c.data.shape[:-1] + (1,) * extra + c.data.shape[-1:])
    cj = J.JetArray(np.broadcast_to(cd, j.data.shape[:-1] + cd.shape[-1:]), c.ctx, c.valid)
    return J.mul(j, cj)


@dataclass
class TimeSliceResult:
    psi_M: F.DerivedField
    certificate: F.DerivedField
    support: Support
    G: F.DerivedField


def time_slice_reduce(op: GreenOperator, f, support: Support, chi: TemporalCutoff, image=None) -> TimeSliceResult:
    """psi_M = -P(chi G psi), certificate h = chi G+ psi + (1 - chi) G- psi, so psi - psi_M = P h.

    ``image`` is the (t0, t1) time interval of the target sub-slab; the
    transition of ``chi`` must lie inside it.
    """
    st = op.st
    if image is not None:
        t0, t1 = image
        if chi.t_minus < t0 or chi.t_plus > t1:
            raise CutoffOutsideImage(f"cutoff transition ({chi.t_minus:g}, {chi.t_plus:g}) not inside the image "
                                     f"({t0:g}, {t1:g})")
    a, b = st.bounds[0]
    if chi.t_minus <= a or chi.t_plus >= b:
        raise CutoffOutsideImage("cutoff transition must lie inside the slab")
    ret = op if op.direction == "retarded" else op.opposite()
    gp = ret.apply_field(f, support)
    gm = ret.opposite().apply_field(f, support)
    Gf = gp - gm
    psi_M = wave(st, multiply_by_cutoff(chi, Gf)).scaled(-1.0)
    h = multiply_by_cutoff(chi, gp) + multiply_by_cutoff(chi, gm, complement=True)
    lo = [chi.t_minus] + [st.bounds[i][0] for i in range(1, st.dim)]
    hi = [chi.t_plus] + [st.bounds[i][1] for i in range(1, st.dim)]
    return TimeSliceResult(psi_M, h, Support(lo, hi, support.active), Gf)


# -- verification rows ---------------------------------------------------------------------

def _random_bump(st, rng, t_center=1.5):
    hw = [rng.uniform(0.3, 0.6), rng.uniform(0.8, 1.1)]
    # box bumps are not periodised, so keep them off the seam x = 0
    c = [rng.uniform(t_center - 0.3, t_center + 0.3), rng.uniform(hw[1] + 0.1, st.periods[1] - hw[1] - 0.1)]
    modes = [(1.0, [float(rng.integers(0, 3))], rng.uniform(0, np.pi)), (0.5, [0.0], 0.0)]
    f, sup = bump_source(st, c, hw, power=20, spatial_modes=modes)
    return f, sup, np.array(c), np.array(hw)


def _light_cone_gap(x, lo, hi, L):
    # spatial distance from x to the periodic interval [lo, hi]
    return np.min([np.clip(np.maximum(lo - (x + s), (x + s) - hi), 0, None) for s in (-L, 0, L)], axis=0)


def verify_green(trials: int = 3, seed: int = 0, modes: int = 64, st2: G.Spacetime | None = None,
                 homotopy_trials: int = 1, points: int = 30) -> list:
    """Inverse, support and homotopy identities of the Green operators on flat torus slabs.

    Scalar rows run on the 1+1 slab ``st2``; homotopy rows on the 3+1 slab
    with the same time interval.
    """
    from .complex import random_section
    from .reports import Row

    rng = np.random.default_rng(seed)
    st2 = st2 if st2 is not None else G.torus_slab(2, (-1.0, 4.0))
    if st2.chart != "torus_slab" or st2.dim != 2:
        raise UnsupportedBackground("the scalar Green rows run on a 1+1 torus slab")
    t_interval = st2.bounds[0]
    L = st2.periods[1]
    ret = GreenOperator(st2, "retarded", (modes,))
    rows = []
    for k in range(trials):
        f, sup, c, hw = _random_bump(st2, rng)
        inner = np.column_stack([c[0] + rng.uniform(-0.9, 0.9, points) * hw[0],
                                 c[1] + rng.uniform(-0.9, 0.9, points) * hw[1]])
        ref = float(np.abs(f.values(inner)).max())
        t, x = np.meshgrid(np.linspace(t_interval[0] + 0.1, t_interval[1] - 0.1, 50),
                           np.linspace(0, L, 50, endpoint=False), indexing="ij")
        grid = np.column_stack([t.ravel(), x.ravel()])
        gap = _light_cone_gap(grid[:, 1], c[1] - hw[1], c[1] + hw[1], L)
        for op in (ret, ret.opposite()):
            g = op.apply_field(f, sup)
            res = float(np.abs(wave(st2, g).values(inner) - f.values(inner)).max())
            rows.append(Row(f"green.inverse.{op.direction}.trial{k:02d}", "max |P G psi - psi| inside the source",
                            "Green operators invert P", res, 1e-8, ref))
            if op.direction == "retarded":
                outside = grid[:, 0] - (c[0] - hw[0]) < gap
            else:
                outside = (c[0] + hw[0]) - grid[:, 0] < gap
            leak = float(np.abs(g.values(grid[outside])).max())
            rows.append(Row(f"green.support.{op.direction}.trial{k:02d}",
                            f"max |G psi| at {int(outside.sum())} grid points outside the causal "
                            f"{'future' if op.direction == 'retarded' else 'past'} of the source",
                            "support of the Green operators", leak, 1e-10, ref))
        f2, s2, _, _ = _random_bump(st2, rng, t_center=2.0)
        for kind, sign in (("G", -1.0), ("G_D", 1.0)):
            a, sa = field_pairing(st2, propagate_field(ret, f, sup, kind), f2, s2)
            b, sb = field_pairing(st2, f, propagate_field(ret, f2, s2, kind), sup)
            rows.append(Row(f"green.propagator_symmetry.{kind}.trial{k:02d}",
                            f"<{kind} a, b> {'+' if sign < 0 else '-'} <a, {kind} b>",
                            "(anti)symmetry of the propagators", abs(a - sign * b), 1e-8, max(sa, sb)))
    st4 = G.torus_slab(4, t_interval, st2.periods[1])
    op4 = GreenOperator(st4, "retarded", (modes, 0, 0))
    active = (True, True, False, False)
    for k in range(homotopy_trials):
        for degree in (-1, 0, 1, 2):
            s = random_section("gr", st4, rng, degrees=(degree,), center=[1.0, 3.0, 1, 1],
                               halfwidths=[0.5, 1.0, 1, 1], degree=1, power=20, active=active)
            pts = np.column_stack([rng.uniform(0.6, 1.4, 4), rng.uniform(2.2, 3.8, 4), rng.uniform(0, 6, 4),
                                   rng.uniform(0, 6, 4)])
            kinds = ("retarded", "advanced") if degree != 0 else ("retarded",)
            for kind in kinds:
                rows.append(Row(f"green.homotopy.{kind}.deg{degree}.trial{k:02d}",
                                "max |Q L s + L Q s - s| for the Green homotopy",
                                "Green homotopies trivialise the inclusion", homotopy_residual(op4, s, pts, kind), 1e-7))
    return rows
