"""Independent reference computations used to cross-check the jet pipeline.

Nothing here touches :mod:`gravfact.jets`; metrics are sampled as plain
floating point matrices and differentiated by central differences.
"""

from __future__ import annotations

import itertools
from typing import Callable

import numpy as np
from scipy import optimize


def _central(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, k: int, h: float,
             richardson: bool = True) -> np.ndarray:
    e = np.zeros_like(x)
    e[..., k] = 1.0

    def d(s):
        return (fn(x + s * e) - fn(x - s * e)) / (2.0 * s)

    if not richardson:
        return d(h)
    return (4.0 * d(h / 2.0) - d(h)) / 3.0


def fd_metric_derivative(metric: Callable, x, step: float = 1e-4) -> np.ndarray:
    """dg[..., a, b, c] = d_c g_ab."""
    x = np.asarray(x, dtype=float)
    dim = x.shape[-1]
    return np.stack([_central(metric, x, k, step) for k in range(dim)], axis=-1)


def fd_christoffel(metric: Callable, x, step: float = 1e-4) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = metric(x)
    gi = np.linalg.inv(g)
    dg = fd_metric_derivative(metric, x, step)
    S = np.einsum("...dcb->...dbc", dg) + dg - np.einsum("...bcd->...dbc", dg)
    return 0.5 * np.einsum("...ad,...dbc->...abc", gi, S)


def fd_riemann(metric: Callable, x, step: float = 1e-4, outer_step: float = 1e-3) -> np.ndarray:
    """R^a_{bcd} from finite differences of finite-difference Christoffels."""
    x = np.asarray(x, dtype=float)
    dim = x.shape[-1]
    G = fd_christoffel(metric, x, step)
    dG = np.stack([_central(lambda y: fd_christoffel(metric, y, step), x, k, outer_step) for k in range(dim)],
                  axis=-1)
    return (np.einsum("...adbc->...abcd", dG) - np.einsum("...acbd->...abcd", dG)
            + np.einsum("...ace,...edb->...abcd", G, G) - np.einsum("...ade,...ecb->...abcd", G, G))


def fd_ricci(metric: Callable, x, step: float = 1e-4, outer_step: float = 1e-3) -> np.ndarray:
    return np.einsum("...abad->...bd", fd_riemann(metric, x, step, outer_step))


def schwarzschild_kretschmann(mass: float, r) -> np.ndarray:
    """R_abcd R^abcd = 48 m^2 / r^6 for the exterior Schwarzschild metric."""
    return 48.0 * mass**2 / np.asarray(r, dtype=float) ** 6


def schwarzschild_metric(mass: float) -> Callable:
    """Plain numpy Schwarzschild metric in (t, r, theta, phi), independent of the jet code."""

    def g(x):
        x = np.asarray(x, dtype=float)
        r, th = x[..., 1], x[..., 2]
        f = 1.0 - 2.0 * mass / r
        out = np.zeros(x.shape[:-1] + (4, 4))
        out[..., 0, 0] = -f
        out[..., 1, 1] = 1.0 / f
        out[..., 2, 2] = r * r
        out[..., 3, 3] = (r * np.sin(th)) ** 2
        return out

    return g


def convergence_order(errors, ratio: float = 2.0) -> np.ndarray:
    """Observed orders log(e_k / e_{k+1}) / log(ratio) for successive step refinements."""
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(ratio)


# -- causal structure ----------------------------------------------------------------

def brute_chronological(p, q, periods=None, windings: int = 3) -> np.ndarray:
    """p << q on a flat chart, trying every winding representative up to ``windings``.

    ``periods`` lists spatial circumferences (None for non-periodic axes).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    k = p.shape[-1] - 1
    periods = periods or [None] * k
    shifts = [range(-windings, windings + 1) if L else [0] for L in periods]
    best = np.full(np.broadcast(p, q).shape[:-1], np.inf)
    for n in itertools.product(*shifts):
        off = np.array([ni * (L or 0.0) for ni, L in zip(n, periods)])
        d = np.linalg.norm(q[..., 1:] - p[..., 1:] + off, axis=-1)
        best = np.minimum(best, d)
    return (q[..., 0] - p[..., 0]) > best


def sample_diamond(p, q, n: int, rng: np.random.Generator, periods=None) -> np.ndarray:
    """Points of I+(p) ∩ I-(q) by rejection from the bounding cylinder."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    T = q[0] - p[0]
    out = []
    while len(out) < n:
        pts = np.empty((4 * n, len(p)))
        pts[:, 0] = rng.uniform(p[0], q[0], 4 * n)
        # |x - p| + |q - x| < T bounds x within T/2 of the spatial midpoint
        pts[:, 1:] = (p[1:] + q[1:]) / 2 + rng.uniform(-T / 2, T / 2, (4 * n, len(p) - 1))
        ok = brute_chronological(p, pts, periods) & brute_chronological(pts, q, periods)
        out.extend(pts[ok])
    return np.array(out[:n])


def sampled_future_membership(p, q, points, n: int = 4000, rng=None, periods=None) -> np.ndarray:
    """x in J+(diamond(p, q)) iff some sampled diamond point y has y << x (or equals it)."""
    rng = rng or np.random.default_rng(0)
    ys = sample_diamond(p, q, n, rng, periods)
    pts = np.asarray(points, dtype=float)
    out = np.zeros(len(pts), dtype=bool)
    for y in ys:
        out |= brute_chronological(y, pts, periods)
    return out


def sampled_disjoint(d1, d2, n: int = 1000, rng=None, periods=None) -> bool:
    """No sampled pair (a in D1, b in D2) is chronologically related either way."""
    rng = rng or np.random.default_rng(0)
    a = sample_diamond(*d1, n, rng, periods)
    b = sample_diamond(*d2, n, rng, periods)
    fwd = brute_chronological(a[:, None, :], b[None, :, :], periods)
    bwd = brute_chronological(b[:, None, :], a[None, :, :], periods)
    return not (fwd.any() or bwd.any())


def _chronological_gap(y, z) -> float:
    return float(z[0] - y[0] - np.sqrt(np.sum((z[1:] - y[1:]) ** 2) + 1e-14))


def _gap_grad(y, z):
    """Gradients of the gap with respect to y and z."""
    d = z[1:] - y[1:]
    u = d / np.sqrt(d @ d + 1e-14)
    return np.concatenate([[-1.0], u]), np.concatenate([[1.0], -u])


def _in_diamond_constraints(p, q, sl, size):
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)

    def above(v):
        out = np.zeros(size)
        out[sl] = _gap_grad(p, v[sl])[1]
        return out

    def below(v):
        out = np.zeros(size)
        out[sl] = _gap_grad(v[sl], q)[0]
        return out

    return [{"type": "ineq", "fun": lambda v: _chronological_gap(p, v[sl]), "jac": above},
            {"type": "ineq", "fun": lambda v: _chronological_gap(v[sl], q), "jac": below}]


def sampled_future_meets(d1, d2, n: int = 300, rng=None, periods=None, starts: int = 4) -> bool:
    """J+(D1) meets D2, searched by sampling and then by local maximisation.

    A sampled chronological pair is a witness.  Otherwise the largest value of
    (z0 - y0) - |z - y| over y in D1, z in D2 is pushed up by SLSQP from the
    best sampled pairs; near diamond tips plain sampling is too sparse in 3+1
    dimensions.  The local search is used on non-periodic charts only.
    """
    rng = rng or np.random.default_rng(0)
    a = sample_diamond(*d1, n, rng, periods)
    b = sample_diamond(*d2, n, rng, periods)
    if brute_chronological(a[:, None, :], b[None, :, :], periods).any():
        return True
    if periods and any(periods):
        return False
    gap = (b[None, :, 0] - a[:, None, 0]) - np.linalg.norm(b[None, :, 1:] - a[:, None, 1:], axis=-1)
    k = a.shape[1]
    cons = _in_diamond_constraints(*d1, slice(0, k), 2 * k) + _in_diamond_constraints(*d2, slice(k, 2 * k), 2 * k)

    def objective(v):
        gy, gz = _gap_grad(v[:k], v[k:])
        return -_chronological_gap(v[:k], v[k:]), -np.concatenate([gy, gz])

    best = -np.inf
    for idx in np.argsort(gap, axis=None)[::-1][:starts]:
        i, j = np.unravel_index(idx, gap.shape)
        res = optimize.minimize(objective, np.concatenate([a[i], b[j]]), jac=True, method="SLSQP", constraints=cons, options={"maxiter": 200, "ftol": 1e-12})
        v = res.x
        feasible = all(c["fun"](v) > -1e-9 for c in cons)
        if feasible:
            best = max(best, _chronological_gap(v[:k], v[k:]))
    return bool(best > 0)


def brute_time_orders(meets, n: int) -> list:
    """Every permutation whose earlier entries' futures miss all later entries.

    ``meets[i][j]`` says J+(R_i) meets R_j.
    """
    return [p for p in itertools.permutations(range(n))
            if not any(meets[p[i]][p[j]] for i in range(n) for j in range(i + 1, n))]
