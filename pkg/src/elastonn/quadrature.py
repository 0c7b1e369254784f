"""Point sampling and numerical integration for loss functionals and norms.

Samplers: equidistant grids, pseudo-random uniform, and Latin Hypercube
(one point per axis stratum, strata shuffled independently per dimension).
Rules: Monte Carlo (V/N * sum f) and the trapezoidal rule in 1D and on 2D
tensor grids.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

SAMPLERS = ("equidistant", "uniform", "lhs")


@dataclass
class PointSet:
    dim: int
    points: np.ndarray  # (n,) in 1D, (n, 2) in 2D
    domain: tuple  # ((a, b),) or ((ax, bx), (ay, by))
    kind: str
    seed: int | None = None
    grid_shape: tuple | None = None  # set for 2D equidistant tensor grids

    @property
    def volume(self):
        v = 1.0
        for a, b in self.domain:
            v *= b - a
        return v


@dataclass
class QuadratureRule:
    tag: str  # monte-carlo | trapezoid
    pointset: PointSet

    @property
    def cell_volume(self):
        return self.pointset.volume / len(self.pointset.points)


def sample(kind, n, domain, seed=0):
    """Draw an n-point set of the given kind over ``domain``.

    ``domain`` is (a, b) in 1D or ((ax, bx), (ay, by)) in 2D. Equidistant 1D
    sets include both endpoints; equidistant 2D sets are tensor grids with an
    aspect ratio following the box (grid_shape records the factorization).
    """
    domain = _norm_domain(domain)
    dim = len(domain)
    if n < 2:
        raise ValueError("need at least 2 points")
    if any(b <= a for a, b in domain):
        raise ValueError("degenerate domain")
    if kind == "equidistant":
        if dim == 1:
            pts = np.linspace(domain[0][0], domain[0][1], n)
            return PointSet(1, pts, domain, kind)
        nx, ny = _grid_factor(n, domain)
        xs = np.linspace(domain[0][0], domain[0][1], nx)
        ys = np.linspace(domain[1][0], domain[1][1], ny)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return PointSet(2, np.column_stack([gx.ravel(), gy.ravel()]), domain, kind, grid_shape=(nx, ny))
    rng = np.random.default_rng(seed)
    if kind == "uniform":
        cols = [rng.uniform(a, b, size=n) for a, b in domain]
    elif kind == "lhs":
        cols = []
        for a, b in domain:
            strata = (rng.permutation(n) + rng.uniform(0.0, 1.0, size=n)) / n
            cols.append(a + (b - a) * strata)
    else:
        raise ValueError(f"unknown sampler {kind!r}")
    pts = cols[0] if dim == 1 else np.column_stack(cols)
    return PointSet(dim, pts, domain, kind, seed=seed)


def _norm_domain(domain):
    domain = tuple(domain)
    if np.isscalar(domain[0]):
        return ((float(domain[0]), float(domain[1])),)
    return tuple((float(a), float(b)) for a, b in domain)


def _grid_factor(n, domain):
    (ax, bx), (ay, by) = domain
    aspect = (bx - ax) / (by - ay)
    nx = max(2, int(round(np.sqrt(n * aspect))))
    ny = max(2, int(round(n / nx)))
    return nx, ny


def mc_integrate(values, volume):
    """V/N * sum(f)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 1:
        raise ValueError("need at least one point")
    return volume / values.size * values.sum()


def trapezoid_1d(values, points):
    """Trapezoid rule on strictly increasing points (endpoints included)."""
    values = np.asarray(values, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    dx = np.diff(points)
    if np.any(dx <= 0.0):
        raise ValueError("points must be strictly increasing")
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * dx))


def trapezoid_2d_grid(values, box):
    """Tensor-product trapezoid on an (nx, ny) grid over ``box``."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 2 or values.shape[1] < 2:
        raise ValueError("need a grid of at least 2x2 values")
    (ax, bx), (ay, by) = _norm_domain(box)
    hx = (bx - ax) / (values.shape[0] - 1)
    hy = (by - ay) / (values.shape[1] - 1)
    cells = 0.25 * (values[:-1, :-1] + values[1:, :-1] + values[:-1, 1:] + values[1:, 1:])
    return float(cells.sum() * hx * hy)


def sorted_with_endpoints(points, domain):
    """Sort a random 1D point set and append missing endpoints (for trapezoid use)."""
    a, b = _norm_domain(domain)[0]
    pts = np.sort(np.asarray(points, dtype=np.float64))
    if pts[0] != a:
        pts = np.concatenate([[a], pts])
    if pts[-1] != b:
        pts = np.concatenate([pts, [b]])
    return pts


def integration_benchmark(integrand, n_values=(100, 1000), seeds=range(20), domain=(-1.0, 1.0), n_ref=100_000):
    """Absolute integration errors of MC / trapezoid x {equi, unif, lhs}.

    Reference value: trapezoid on an ``n_ref``-point equidistant grid. Random
    samplers are repeated over ``seeds``; equidistant rows carry seed -1.
    Returns rows (rule, sampler, n, seed, abs_error).
    """
    a, b = _norm_domain(domain)[0]
    ref_pts = np.linspace(a, b, n_ref)
    ref = trapezoid_1d(integrand(ref_pts), ref_pts)
    volume = b - a

    rows = []
    for n in n_values:
        equi = np.linspace(a, b, n)
        fe = integrand(equi)
        rows.append(("mc", "equidistant", n, -1, abs(mc_integrate(fe, volume) - ref)))
        rows.append(("trapezoid", "equidistant", n, -1, abs(trapezoid_1d(fe, equi) - ref)))
        for kind in ("uniform", "lhs"):
            for seed in seeds:
                ps = sample(kind, n, (a, b), seed=seed)
                rows.append(("mc", kind, n, seed, abs(mc_integrate(integrand(ps.points), volume) - ref)))
                pts = sorted_with_endpoints(ps.points, (a, b))
                rows.append(("trapezoid", kind, n, seed, abs(trapezoid_1d(integrand(pts), pts) - ref)))
    return rows


def benchmark_to_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rule", "sampler", "n", "seed", "abs_error"])
        for r in rows:
            w.writerow([r[0], r[1], r[2], r[3], repr(r[4])])
