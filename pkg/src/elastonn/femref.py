"""Reference factory: Gaussian-process load fields, a 1D Galerkin solver with
quadratic elements (linear and Newton paths), and operator-learning datasets.

The solver mesh (default 512 elements / 1025 nodes) is decoupled from the
1024-point exchange grid on which fields and solutions are stored.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky_banded, cho_solve_banded, solveh_banded

from . import kernels, mechanics

DATASET_FORMAT_VERSION = 1

SENSOR_COUNT = 20


# ---------------------------------------------------------------------------
# Gaussian process sampling
# ---------------------------------------------------------------------------


@dataclass
class ForceField:
    grid: np.ndarray
    values: np.ndarray
    kernel: str = "squared-exponential"
    corr_length: float = 0.1
    seed: int | None = None

    def __call__(self, X):
        return np.interp(np.asarray(X, dtype=np.float64), self.grid, self.values)


class GpSampler:
    """Zero-mean unit-variance GP on a fixed grid; Cholesky factored once."""

    def __init__(self, grid, corr_length=0.1, kernel="squared-exponential", period=2.0):
        self.grid = np.asarray(grid, dtype=np.float64)
        self.corr_length = float(corr_length)
        self.kernel = kernel
        if kernel == "squared-exponential":
            cov = kernels.sq_exp_cov(self.grid, self.corr_length)
        elif kernel == "periodic":
            cov = kernels.periodic_cov(self.grid, self.corr_length, period)
        else:
            raise ValueError(f"unknown kernel {kernel!r}")
        self._chol = self._factor(cov)

    @staticmethod
    def _factor(cov):
        jitter = 1e-10
        while jitter <= 1e-6:
            try:
                return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
            except np.linalg.LinAlgError:
                jitter *= 10.0
        raise np.linalg.LinAlgError("covariance not positive definite (jitter up to 1e-6 tried)")

    def sample(self, seed) -> ForceField:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        z = rng.standard_normal(self.grid.shape[0])
        return ForceField(
            self.grid,
            self._chol @ z,
            kernel=self.kernel,
            corr_length=self.corr_length,
            seed=None if isinstance(seed, np.random.Generator) else int(seed),
        )


def gp_sample(n_grid, corr_length, seed, domain=(-1.0, 1.0), kernel="squared-exponential") -> ForceField:
    if n_grid < 2:
        raise ValueError("need at least 2 grid points")
    if corr_length <= 0:
        raise ValueError("correlation length must be positive")
    grid = np.linspace(domain[0], domain[1], n_grid)
    return GpSampler(grid, corr_length, kernel=kernel).sample(seed)


# ---------------------------------------------------------------------------
# 1D FEM with quadratic Lagrange elements
# ---------------------------------------------------------------------------


@dataclass
class Fem1dSolution:
    nodes: np.ndarray
    u_nodes: np.ndarray
    grid: np.ndarray
    u: np.ndarray
    du: np.ndarray
    newton_iters: int = 0

    def evaluate(self, X):
        return _fe_eval(self.nodes, self.u_nodes, X)[0]


def _fe_eval(nodes, u_nodes, X):
    """Evaluate the FE field and its derivative at arbitrary points."""
    X = np.atleast_1d(np.asarray(X, dtype=np.float64))
    a, b = nodes[0], nodes[-1]
    n_el = (nodes.shape[0] - 1) // 2
    h = (b - a) / n_el
    e = np.clip(((X - a) / h).astype(int), 0, n_el - 1)
    xi = 2.0 * (X - (a + e * h)) / h - 1.0
    nv = kernels.shape_values(xi)
    dv = kernels.shape_derivs(xi) * (2.0 / h)
    idx = 2 * e
    ue = np.stack([u_nodes[idx], u_nodes[idx + 1], u_nodes[idx + 2]], axis=-1)
    return (ue * nv).sum(-1), (ue * dv).sum(-1)


class Fem1d:
    """Uniform quadratic-element mesh for -u'' = f on [-1, 1].

    ``clamp`` is "left" (u(-1)=0, natural/Neumann right end) or "both".
    The linear stiffness is Cholesky-factored once and reused across loads.
    """

    def __init__(self, n_elements=512, domain=(-1.0, 1.0), out_grid=1024, clamp="left"):
        self.n_el = int(n_elements)
        self.domain = (float(domain[0]), float(domain[1]))
        self.h = (self.domain[1] - self.domain[0]) / self.n_el
        self.nodes = np.linspace(self.domain[0], self.domain[1], 2 * self.n_el + 1)
        self.out_grid = np.linspace(self.domain[0], self.domain[1], out_grid)
        self.clamp = clamp
        self._free = slice(1, None) if clamp == "left" else slice(1, -1)
        ab = kernels.stiffness_banded(self.n_el, self.h)[:, self._free]
        self._chol = cholesky_banded(ab)
        # quadrature point locations for load interpolation
        xi = kernels.GAUSS_XI
        centers = self.nodes[1::2]
        self.quad_x = centers[:, None] + 0.5 * self.h * xi[None, :]

    def _load(self, f, pi2):
        if isinstance(f, ForceField):
            f_quad = np.interp(self.quad_x, f.grid, f.values)
        elif callable(f):
            f_quad = np.asarray(f(self.quad_x), dtype=np.float64)
        else:
            f_quad = np.full_like(self.quad_x, float(f))
        b = kernels.load_vector(f_quad, self.h)
        if self.clamp == "left":
            b[-1] += pi2
        return b

    def _solution(self, u_nodes, newton_iters=0):
        u, du = _fe_eval(self.nodes, u_nodes, self.out_grid)
        return Fem1dSolution(self.nodes, u_nodes, self.out_grid, u, du, newton_iters)

    def solve_linear(self, f, pi2=0.0) -> Fem1dSolution:
        b = self._load(f, pi2)
        u = np.zeros_like(self.nodes)
        u[self._free] = cho_solve_banded((self._chol, False), b[self._free])
        return self._solution(u)

    def solve_newton_a(self, init=None, tol=1e-10, max_iter=25) -> Fem1dSolution:
        """Newton on the weak form of the nonlinear bar (f(X)=X, T=0)."""
        load = self._load(lambda x: x, 0.0)
        u = np.zeros_like(self.nodes)
        if init is not None:
            u[:] = init(self.nodes) if callable(init) else np.asarray(init, dtype=np.float64)
            u[0] = 0.0
        free = self._free
        for it in range(max_iter):
            ok, R, ab = kernels.newton_assemble_a(u, self.h, load)
            if not ok:
                raise FloatingPointError("stretch 1+u' went non-positive at a quadrature point")
            r_free = R[free]
            if np.linalg.norm(r_free) <= tol:
                return self._solution(u, newton_iters=it)
            step = np.zeros_like(u)
            step[free] = solveh_banded(ab[:, free], -r_free)
            # backtrack until the stretch stays positive
            scale = 1.0
            for _ in range(10):
                ok, _, _ = kernels.newton_assemble_a(u + scale * step, self.h, load)
                if ok:
                    break
                scale *= 0.5
            else:
                raise FloatingPointError("line search failed to keep stretch positive")
            u = u + scale * step
        raise RuntimeError(f"Newton did not converge within {max_iter} iterations")


def fem1d_linear(f, pi2=0.0, n_elements=512, out_grid=1024, clamp="left") -> Fem1dSolution:
    return Fem1d(n_elements, out_grid=out_grid, clamp=clamp).solve_linear(f, pi2)


def fem1d_newton_a(init=None, n_elements=512, out_grid=1024) -> Fem1dSolution:
    return Fem1d(n_elements, out_grid=out_grid).solve_newton_a(init=init)


# ---------------------------------------------------------------------------
# operator-learning datasets
# ---------------------------------------------------------------------------


@dataclass
class OperatorDataset:
    mode: str  # force-field | neumann-pi2 | periodic
    grid: np.ndarray  # (n,)
    sensor_idx: np.ndarray  # (m,) indices into grid (force-field/periodic)
    sensors: np.ndarray  # (N, m) fields at sensors, or (N, 1) pi2 values
    eval_x: np.ndarray  # (N, P)
    eval_u: np.ndarray  # (N, P)
    grid_f: np.ndarray  # (N, n)
    grid_u: np.ndarray  # (N, n)
    grid_du: np.ndarray  # (N, n)
    pi2: np.ndarray | None = None  # (N,) for neumann mode
    seed: int = 0
    corr_length: float = 0.1
    meta: dict = field(default_factory=dict)

    @property
    def n_cases(self):
        return self.sensors.shape[0]

    @property
    def n_entries(self):
        return self.eval_x.size


def build_dataset(n_cases, n_per_case, n_sensors=SENSOR_COUNT, seed=0, mode="force-field",
                  grid_n=1024, corr_length=0.1, n_elements=512) -> OperatorDataset:
    """Generate (sensor, query point, target) data plus full exchange-grid fields.

    force-field: GP loads, FEM-solved with pi2 = 0.
    neumann-pi2: f = 1, pi2 ~ U[0, 1], closed-form targets.
    periodic:    periodic-kernel GP loads, bar clamped at both ends.
    """
    if n_cases < 1 or n_per_case < 1:
        raise ValueError("need n_cases >= 1 and n_per_case >= 1")
    ss = np.random.SeedSequence(seed)
    field_rng, eval_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    grid = np.linspace(-1.0, 1.0, grid_n)
    sensor_idx = np.round(np.linspace(0, grid_n - 1, n_sensors)).astype(int)
    eval_x = eval_rng.uniform(-1.0, 1.0, size=(n_cases, n_per_case))

    grid_f = np.empty((n_cases, grid_n))
    grid_u = np.empty((n_cases, grid_n))
    grid_du = np.empty((n_cases, grid_n))
    eval_u = np.empty((n_cases, n_per_case))
    pi2 = None

    if mode == "neumann-pi2":
        pi2 = field_rng.uniform(0.0, 1.0, size=n_cases)
        sensors = pi2[:, None].copy()
        for i in range(n_cases):
            grid_f[i] = 1.0
            grid_u[i] = mechanics.analytic_b2_neumann(grid, pi2[i])
            grid_du[i] = mechanics.analytic_b2_neumann_strain(grid, pi2[i])
            eval_u[i] = mechanics.analytic_b2_neumann(eval_x[i], pi2[i])
    elif mode in ("force-field", "periodic"):
        kernel = "periodic" if mode == "periodic" else "squared-exponential"
        clamp = "both" if mode == "periodic" else "left"
        sampler = GpSampler(grid, corr_length, kernel=kernel)
        fem = Fem1d(n_elements, out_grid=grid_n, clamp=clamp)
        sensors = np.empty((n_cases, n_sensors))
        for i in range(n_cases):
            f = sampler.sample(field_rng)
            sol = fem.solve_linear(f, pi2=0.0)
            grid_f[i] = f.values
            grid_u[i] = sol.u
            grid_du[i] = sol.du
            eval_u[i], _ = _fe_eval(sol.nodes, sol.u_nodes, eval_x[i])
            sensors[i] = f.values[sensor_idx]
    else:
        raise ValueError(f"unknown dataset mode {mode!r}")

    return OperatorDataset(
        mode=mode, grid=grid, sensor_idx=sensor_idx, sensors=sensors,
        eval_x=eval_x, eval_u=eval_u, grid_f=grid_f, grid_u=grid_u, grid_du=grid_du,
        pi2=pi2, seed=seed, corr_length=corr_length,
        meta={"n_elements": n_elements, "sensor_rule": "rounded linspace over grid indices"},
    )


_ARRAY_FIELDS = ("grid", "sensor_idx", "sensors", "eval_x", "eval_u", "grid_f", "grid_u", "grid_du", "pi2")


def save_dataset(ds: OperatorDataset, path):
    """Write ``manifest.json`` + ``data.bin`` (little-endian float64 blocks)."""
    os.makedirs(path, exist_ok=True)
    order, blob = [], []
    for name in _ARRAY_FIELDS:
        arr = getattr(ds, name)
        if arr is None:
            continue
        order.append({"name": name, "shape": list(arr.shape)})
        blob.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    data = b"".join(blob)
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "mode": ds.mode,
        "seed": ds.seed,
        "corr_length": ds.corr_length,
        "n_cases": int(ds.n_cases),
        "n_per_case": int(ds.eval_x.shape[1]),
        "meta": ds.meta,
        "arrays": order,
        "checksum": hashlib.sha256(data).hexdigest(),
    }
    with open(os.path.join(path, "data.bin"), "wb") as fh:
        fh.write(data)
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_dataset(path) -> OperatorDataset:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format version {manifest.get('format_version')}")
    with open(os.path.join(path, "data.bin"), "rb") as fh:
        data = fh.read()
    if hashlib.sha256(data).hexdigest() != manifest["checksum"]:
        raise ValueError("dataset checksum mismatch (file corrupt or truncated)")
    arrays, off = {}, 0
    for spec in manifest["arrays"]:
        size = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).astype(np.float64)
        arrays[spec["name"]] = arr.reshape(spec["shape"])
        off += size * 8
    sensor_idx = arrays.pop("sensor_idx").astype(int)
    pi2 = arrays.pop("pi2", None)
    return OperatorDataset(
        mode=manifest["mode"], sensor_idx=sensor_idx, pi2=pi2,
        seed=manifest["seed"], corr_length=manifest["corr_length"], meta=manifest["meta"],
        **arrays,
    )


def dataset_checksum(path):
    with open(os.path.join(path, "manifest.json")) as fh:
        return json.load(fh)["checksum"]
