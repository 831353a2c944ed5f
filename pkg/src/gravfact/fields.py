"""Analytic tensor fields on a chart, given as callables on coordinate jets.

A field's ``func`` receives the list of coordinate functions (scalar
:class:`~gravfact.jets.JetArray` objects, possibly batched) and returns nested
lists of components.  Contravariant indices come first in the component
layout, e.g. a ``(1, 1)`` field is indexed ``[a][b]`` for ``T^a_b``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import jets as J

KINDS = {
    "scalar": (0, 0),
    "vector": (1, 0),
    "covector": (0, 1),
    "sym2_lower": (0, 2),
    "sym2_upper": (2, 0),
}


@dataclass(frozen=True)
class TensorField:
    valence: tuple[int, int]
    func: Callable
    dim: int
    symmetry: str = "none"
    name: str = ""

    @property
    def rank(self) -> int:
        return self.valence[0] + self.valence[1]

    @property
    def kinds(self) -> str:
        """Index positions as a string of 'u' (up) and 'd' (down)."""
        return "u" * self.valence[0] + "d" * self.valence[1]

    def jets(self, points, order: int) -> J.JetArray:
        out = J.evaluate(self.func, points, order)
        want = (self.dim,) * self.rank
        got = out.shape[np.ndim(points) - 1:]
        if got != want:
            raise ValueError(f"field {self.name or '?'} returned shape {got}, expected {want}")
        if self.symmetry == "sym2":
            d = out.data
            if not np.allclose(d, np.swapaxes(d, -2, -3), rtol=0, atol=1e-14 * (1 + np.abs(d).max())):
                raise ValueError("sym2 field is not symmetric")
        return out

    def values(self, points) -> np.ndarray:
        return self.jets(points, 0).value()

    def scaled(self, c: float) -> "TensorField":
        f = self.func
        return TensorField(self.valence, lambda x: _scale_nested(f(x), c), self.dim, self.symmetry, self.name)

    def __add__(self, other: "TensorField") -> "TensorField":
        if self.valence != other.valence or self.dim != other.dim:
            raise ValueError("cannot add fields of different valence")
        f, g = self.func, other.func
        sym = self.symmetry if self.symmetry == other.symmetry else "none"
        return TensorField(self.valence, lambda x: _add_nested(f(x), g(x)), self.dim, sym)


def _scale_nested(a, c):
    if isinstance(a, (list, tuple)):
        return [_scale_nested(e, c) for e in a]
    return a * c


def _add_nested(a, b):
    if isinstance(a, (list, tuple)):
        return [_add_nested(x, y) for x, y in zip(a, b)]
    return a + b


def make(kind: str, func: Callable, dim: int, name: str = "") -> TensorField:
    valence = KINDS[kind]
    sym = "sym2" if kind.startswith("sym2") else "none"
    return TensorField(valence, func, dim, sym, name)


def zero(kind: str, dim: int) -> TensorField:
    rank = sum(KINDS[kind])

    def f(x):
        return _nested_const(0.0, (dim,) * rank)

    return make(kind, f, dim, "zero")


def _nested_const(v, shape):
    if not shape:
        return v
    return [_nested_const(v, shape[1:]) for _ in range(shape[0])]


# -- polynomials -------------------------------------------------------------

@dataclass(frozen=True)
class Polynomial:
    """Sum of c_e * prod (x_i - center_i)^e_i."""

    exps: np.ndarray
    coeffs: np.ndarray
    center: np.ndarray

    def __call__(self, x):
        deg = int(self.exps.max()) if self.exps.size else 0
        shifted = [x[i] - self.center[i] for i in range(len(x))]
        powers = [[1.0] for _ in x]
        for i, s in enumerate(shifted):
            for _ in range(deg):
                powers[i].append(powers[i][-1] * s)
        total = 0.0
        for e, c in zip(self.exps, self.coeffs):
            if c == 0:
                continue
            term = c
            for i, k in enumerate(e):
                if k:
                    term = term * powers[i][k]
            total = total + term
        return total


def random_polynomial(dim: int, degree: int, rng: np.random.Generator, center, scale: float = 1.0) -> Polynomial:
    exps = [e for d in range(degree + 1) for e in J._exponents(dim, d)]
    exps = np.array(exps, dtype=int).reshape(len(exps), dim)
    coeffs = rng.normal(size=len(exps)) * scale / (1.0 + exps.sum(axis=1))
    return Polynomial(exps, coeffs, np.asarray(center, dtype=float))


def random_field(kind: str, dim: int, rng: np.random.Generator, center, degree: int = 3,
                 scale: float = 1.0) -> TensorField:
    """Field whose components are independent random polynomials."""
    rank = sum(KINDS[kind])
    polys = {}
    for idx in itertools.product(range(dim), repeat=rank):
        key = tuple(sorted(idx)) if kind.startswith("sym2") else idx
        if key not in polys:
            polys[key] = random_polynomial(dim, degree, rng, center, scale)

    def f(x):
        def build(prefix):
            if len(prefix) == rank:
                key = tuple(sorted(prefix)) if kind.startswith("sym2") else tuple(prefix)
                return polys[key](x)
            return [build(prefix + [i]) for i in range(dim)]

        return build([])

    return make(kind, f, dim, f"random_{kind}")


def random_trig_field(kind: str, dim: int, rng: np.random.Generator, terms: int = 2,
                      kmax: float = 1.5, scale: float = 1.0) -> TensorField:
    """Components that are short sums of A sin(k.x + phi); every derivative order is nonzero."""
    rank = sum(KINDS[kind])
    data = {}
    for idx in itertools.product(range(dim), repeat=rank):
        key = tuple(sorted(idx)) if kind.startswith("sym2") else idx
        if key not in data:
            data[key] = (rng.normal(size=terms) * scale, rng.uniform(-kmax, kmax, size=(terms, dim)),
                         rng.uniform(0, 2 * np.pi, size=terms))

    def comp(key, x):
        amp, ks, ph = data[key]
        total = 0.0
        for a, k, p in zip(amp, ks, ph):
            arg = p
            for i in range(dim):
                arg = arg + k[i] * x[i]
            total = total + a * J.sin(arg)
        return total

    def f(x):
        def build(prefix):
            if len(prefix) == rank:
                key = tuple(sorted(prefix)) if kind.startswith("sym2") else tuple(prefix)
                return comp(key, x)
            return [build(prefix + [i]) for i in range(dim)]

        return build([])

    return make(kind, f, dim, f"trig_{kind}")


def constant_field(kind: str, value, dim: int | None = None) -> TensorField:
    value = np.asarray(value, dtype=float)
    if dim is None:
        dim = value.shape[0] if value.ndim else 1

    def f(x):
        return value.tolist() if value.ndim else float(value)

    return make(kind, f, dim, "constant")


# -- waves -------------------------------------------------------------------

def plane_wave(kind: str, amplitude, k, phase: float = 0.0) -> TensorField:
    """A * cos(k_mu x^mu + phase) with a constant amplitude tensor."""
    amplitude = np.asarray(amplitude, dtype=float)
    k = np.asarray(k, dtype=float)
    dim = len(k)

    def f(x):
        arg = phase
        for i in range(dim):
            arg = arg + k[i] * x[i]
        c = J.cos(arg)
        return _mul_nested(amplitude, c)

    return make(kind, f, dim, "plane_wave")


def _mul_nested(arr: np.ndarray, c):
    if arr.ndim == 0:
        return c * float(arr)
    return [_mul_nested(a, c) for a in arr]


def tt_polarization(k_spatial, which: str = "plus") -> np.ndarray:
    """4D transverse-traceless polarization (lower indices) for a wave moving along k."""
    n = np.asarray(k_spatial, dtype=float)
    n = n / np.linalg.norm(n)
    trial = np.array([1.0, 0, 0]) if abs(n[0]) < 0.9 else np.array([0, 1.0, 0])
    e1 = trial - n * (trial @ n)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    if which == "plus":
        s = np.outer(e1, e1) - np.outer(e2, e2)
    elif which == "cross":
        s = np.outer(e1, e2) + np.outer(e2, e1)
    else:
        raise ValueError("polarization must be 'plus' or 'cross'")
    eps = np.zeros((4, 4))
    eps[1:, 1:] = s
    return eps


def tt_plane_wave(omega: float, k_spatial, which: str = "plus", phase: float = 0.0) -> TensorField:
    """TT wave on 4D Minkowski with covector (−omega, k); null when omega = |k|."""
    k = np.concatenate([[-omega], np.asarray(k_spatial, dtype=float)])
    return plane_wave("sym2_lower", tt_polarization(k_spatial, which), k, phase)


# -- bumps -------------------------------------------------------------------

def bump(u, power: int):
    """(1 - u^2)^power on |u| < 1 and zero outside (C^(power-1) at the edges)."""
    u0 = J.base(u)
    inside = np.abs(u0) < 1.0
    val = (1.0 - u * u) ** power
    return J.where(inside, val, 0.0 * val) if isinstance(val, J.JetArray) else np.where(inside, val, 0.0)


def box_bump(center, halfwidths, power: int = 8) -> Callable:
    """Scalar callable: product of 1D bumps, supported in an open coordinate box."""
    center = np.asarray(center, dtype=float)
    halfwidths = np.asarray(halfwidths, dtype=float)

    def b(x):
        total = 1.0
        for i in range(len(center)):
            if np.isinf(halfwidths[i]):
                continue
            total = total * bump((x[i] - center[i]) / halfwidths[i], power)
        return total

    return b


def enveloped(field_: TensorField, envelope: Callable) -> TensorField:
    """Multiply every component of a field by a scalar envelope."""
    f = field_.func

    def g(x):
        e = envelope(x)
        return _scale_nested(f(x), e)

    return TensorField(field_.valence, g, field_.dim, field_.symmetry, field_.name + "*bump")


# -- lazily evaluated fields ---------------------------------------------------

@dataclass(frozen=True)
class DerivedField:
    """A field known only through ``jets_fn(points, order) -> JetArray``.

    Used for the output of differential operators and Green operators, which
    need their inputs at a higher jet order than they return.
    """

    valence: tuple[int, int]
    jets_fn: Callable
    dim: int
    name: str = ""

    @property
    def rank(self) -> int:
        return self.valence[0] + self.valence[1]

    @property
    def kinds(self) -> str:
        return "u" * self.valence[0] + "d" * self.valence[1]

    def jets(self, points, order: int) -> J.JetArray:
        return self.jets_fn(np.asarray(points, dtype=float), order)

    def values(self, points) -> np.ndarray:
        return self.jets(points, 0).value()

    def scaled(self, c: float) -> "DerivedField":
        return derived_combination([(c, self)])

    def __add__(self, other):
        return derived_combination([(1.0, self), (1.0, other)])

    def __sub__(self, other):
        return derived_combination([(1.0, self), (-1.0, other)])


def derived_combination(terms) -> DerivedField:
    """Linear combination sum c_i F_i of fields of equal valence."""
    terms = [(c, f) for c, f in terms if c != 0]
    if not terms:
        raise ValueError("empty combination")
    v, dim = terms[0][1].valence, terms[0][1].dim
    if any(f.valence != v or f.dim != dim for _, f in terms):
        raise ValueError("cannot combine fields of different valence")

    def jets_fn(points, order):
        out = None
        for c, f in terms:
            j = f.jets(points, order) * c
            out = j if out is None else out + j
        return out

    return DerivedField(v, jets_fn, dim, "+".join(f.name or "?" for _, f in terms))


def as_derived(f) -> DerivedField:
    if isinstance(f, DerivedField):
        return f
    return DerivedField(f.valence, f.jets, f.dim, f.name)
