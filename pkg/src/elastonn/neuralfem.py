"""Per-BVP neural solvers.

* PINN on the nonlinear bar (residual + boundary penalty)
* DEM on bars and the 2D plate (potential-energy loss, Dirichlet conditions
  enforced exactly by an output transform), plus the mixed displacement/stress
  variant
* DCM on the plate (momentum residual + traction penalty, the documented
  negative result)
* competitive PINN (zero-sum residual game trained by competitive gradient
  descent)
* transfer-learning sweeps over the Neumann parameter

Training closures rebuild the tape per evaluation and return inf on
constitutive domain errors, so the line search backtracks out of
inadmissible states.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import mechanics, metrics, network, optim, quadrature

LBFGS_ITERS_PER_EPOCH = 20  # one "epoch" = one full-batch step of up to 20 inner iterations


@dataclass
class CollocationPlan:
    interior: np.ndarray  # (N_f,) in 1D, (N_f, 2) in 2D
    boundary: np.ndarray
    sampler: str = "lhs"
    seed: int = 0


@dataclass
class BoundaryTransform:
    """u = lift(X) + window(X) * z(X), with window = 0 on the Dirichlet boundary."""

    lift: object
    window: object


def bar_transform():
    """Clamped-left bar: u = (1 + X) z."""
    return BoundaryTransform(lift=lambda X: np.zeros_like(X), window=lambda X: 1.0 + X)


def plate_transform():
    """Plate clamped at x = 0: u = x * z, per component."""
    return BoundaryTransform(lift=lambda X: np.zeros((X.shape[0], 2)), window=lambda X: X[:, :1])


def apply_transform(bt: BoundaryTransform, z_values, X):
    """u = lift + window * z for plain numpy fields (oracle injection path)."""
    X = np.asarray(X, dtype=np.float64)
    return bt.lift(X) + bt.window(X) * np.asarray(z_values)


@dataclass
class NeuralFemConfig:
    widths: list = field(default_factory=lambda: [1, 10, 1])
    activation: str = "tanh"
    epochs: int = 15
    optimizer: str = "lbfgs"
    lr: float = 1.0
    n_interior: int = 100
    sampler: str = "lhs"
    integration: str = "trapezoid"  # dem: trapezoid | mc
    lambda_b: float = 1.0
    seed: int = 0
    early_stopping: bool = False
    patience: int = 20
    n_val: int = 100
    tol_change: float = 0.0

    def __post_init__(self):
        if self.lambda_b < 0:
            raise ValueError("lambda_b must be >= 0")

    def optim_config(self):
        if self.optimizer == "lbfgs":
            return optim.OptimConfig(kind="lbfgs", lr=self.lr, max_iter=self.epochs * LBFGS_ITERS_PER_EPOCH,
                                     tol_change=self.tol_change)
        if self.optimizer in ("sgd", "adam"):
            return optim.OptimConfig(kind=self.optimizer, lr=self.lr, max_iter=self.epochs)
        raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    mlp: network.Mlp
    history: optim.LossHistory
    metrics: dict
    seconds: float
    seed: int
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# taped helpers
# ---------------------------------------------------------------------------


def unflatten_params(flat, widths):
    """Slice a flat leaf Var into per-layer (W, b) Vars."""
    pv, off = [], 0
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        w = ad.reshape(flat[off : off + n_in * n_out], (n_out, n_in))
        off += n_in * n_out
        b = flat[off : off + n_out]
        off += n_out
        pv.append((w, b))
    return pv


def bar_fields(tape, flat_var, widths, activations, X_np, transform=True, order=2):
    """u (and input-derivatives) of a 1D network at X_np, as Vars.

    With ``transform`` the clamped-end map u = (1+X) z is applied:
    u' = z + (1+X) z', u'' = 2 z' + (1+X) z''.
    """
    pv = unflatten_params(flat_var, widths)
    X = tape.const(np.asarray(X_np, dtype=np.float64).reshape(-1, 1))
    out = network.forward_with_tangents(X, pv, activations, order=order)
    if not transform:
        return out
    z, dz = out[0], out[1]
    a = tape.const(1.0 + X.value)
    u = a * z
    du = z + a * dz
    if order == 2:
        return u, du, 2.0 * dz + a * out[2]
    return u, du


def trapezoid_var(integrand, points):
    """Taped trapezoid rule; ``integrand`` is a (B, 1) Var on sorted ``points``."""
    dx = integrand.tape.const(np.diff(points).reshape(-1, 1))
    return ad.sum_all((integrand[1:, :] + integrand[:-1, :]) * dx) * 0.5


def mean_sq(v):
    return ad.mean_all(v * v)


def evaluate_bar_model(mlp, X, transform=True):
    """Numpy (u, du) of a trained 1D model on a grid."""
    tape = ad.Tape()
    flat = tape.var(mlp.get_flat(), requires_grad=False)
    u, du = bar_fields(tape, flat, mlp.widths, mlp.activations, np.asarray(X, float), transform, order=1)
    return u.value.ravel(), du.value.ravel()


def _bar_metrics(mlp, problem, transform, n_grid=1000):
    grid = np.linspace(-1.0, 1.0, n_grid)
    u, du = evaluate_bar_model(mlp, grid, transform=transform)
    if problem.name == "a":
        u_ref, du_ref = mechanics.analytic_a(grid)
    elif problem.name == "b1":
        u_ref, du_ref = mechanics.analytic_b1(grid), mechanics.analytic_b1_strain(grid)
    else:
        u_ref = mechanics.analytic_b2_neumann(grid, problem.traction)
        du_ref = mechanics.analytic_b2_neumann_strain(grid, problem.traction)
    return {"rel_l2_u": metrics.rel_l2(u, u_ref), "rel_l2_du": metrics.rel_l2(du, du_ref)}


# ---------------------------------------------------------------------------
# PINN (bar problems)
# ---------------------------------------------------------------------------


def pinn_loss_terms(problem, X_f, fields_f, fields_left, fields_right, lambda_b):
    """Interior mean-squared residual + lambda_b * boundary violation.

    Fields are (u, du, d2u) tuples (Vars or arrays) at the interior points and
    the two bar ends; boundary operators are u(-1) and u'(1) - pi2.
    """
    _, du, d2u = fields_f
    if problem.name == "a":
        r = mechanics.residual_a(X_f, du, d2u)
        target = 0.0
    elif problem.name == "b2":
        r = mechanics.residual_b2(X_f, d2u, problem.body_force)
        target = problem.traction
    else:
        raise ValueError(f"PINN loss not defined for problem {problem.name!r}")
    u_l = fields_left[0]
    du_r = fields_right[1]
    if isinstance(r, ad.Var):
        boundary = ad.mean_all(ad.concat([u_l * u_l, (du_r - target) * (du_r - target)], axis=0))
        return mean_sq(r) + lambda_b * boundary
    boundary = 0.5 * (np.square(u_l).mean() + np.square(du_r - target).mean())
    return float(np.mean(np.square(r)) + lambda_b * boundary)


def pinn_closure(mlp, problem, X_f, lambda_b=1.0):
    """fun(flat) -> (loss, grad) for optimizers and gradient checks."""
    X_f = np.asarray(X_f, dtype=np.float64)

    def fun(flat):
        tape = ad.Tape()
        fv = tape.var(flat)
        try:
            f_int = bar_fields(tape, fv, mlp.widths, mlp.activations, X_f, transform=False)
            f_l = bar_fields(tape, fv, mlp.widths, mlp.activations, np.array([-1.0]), transform=False)
            f_r = bar_fields(tape, fv, mlp.widths, mlp.activations, np.array([1.0]), transform=False)
            loss = pinn_loss_terms(problem, tape.const(X_f.reshape(-1, 1)), f_int, f_l, f_r, lambda_b)
        except ad.AdError:
            return np.inf, np.zeros_like(flat)
        return float(loss.value), ad.gradient(loss, fv).value.copy()

    return fun


def pinn_loss(mlp, plan: CollocationPlan, problem, lambda_b=1.0):
    """Loss Var of a model on a plan (fresh tape)."""
    tape = ad.Tape()
    flat = tape.var(mlp.get_flat())
    f_int = bar_fields(tape, flat, mlp.widths, mlp.activations, plan.interior, transform=False)
    f_l = bar_fields(tape, flat, mlp.widths, mlp.activations, np.array([-1.0]), transform=False)
    f_r = bar_fields(tape, flat, mlp.widths, mlp.activations, np.array([1.0]), transform=False)
    return pinn_loss_terms(problem, tape.const(plan.interior.reshape(-1, 1)), f_int, f_l, f_r, lambda_b)


def make_plan(problem, n_interior, sampler="lhs", seed=0):
    ps = quadrature.sample(sampler, n_interior, problem.domain, seed=seed)
    return CollocationPlan(interior=ps.points, boundary=np.asarray(problem.domain, float),
                           sampler=sampler, seed=seed)


def _admissible_init(mlp, fun, max_retries=3):
    """Shrink a fresh init by 0.5 until the loss is finite (constitutive domain).

    Returns (flat params, retry count); raises after ``max_retries`` failures.
    """
    x0 = mlp.get_flat()
    for retry in range(max_retries + 1):
        x = x0 * (0.5**retry)
        if np.isfinite(fun(x)[0]):
            return x, retry
    raise ad.AdError(f"no admissible initialization after {max_retries} range reductions")


def train_pinn(problem=None, cfg: NeuralFemConfig | None = None) -> TrainResult:
    """Train a PINN on the bar; reports rel-L2 vs the closed-form solution."""
    problem = problem or mechanics.example_a()
    cfg = cfg or NeuralFemConfig()
    plan = make_plan(problem, cfg.n_interior, cfg.sampler, cfg.seed)
    mlp = network.build_mlp(cfg.widths, cfg.activation, network.InitScheme(seed=cfg.seed))
    fun = pinn_closure(mlp, problem, plan.interior, cfg.lambda_b)
    x, retries = _admissible_init(mlp, fun)
    t0 = time.perf_counter()
    history = optim.minimize(fun, x, cfg.optim_config())
    seconds = time.perf_counter() - t0
    mlp.set_flat(x)
    result = TrainResult(mlp, history, _bar_metrics(mlp, problem, transform=False), seconds, cfg.seed)
    result.metrics["retries"] = retries
    return result


# ---------------------------------------------------------------------------
# DEM on bars
# ---------------------------------------------------------------------------


def dem_points(problem, cfg):
    """Integration points for the configured rule (sorted + endpoints for trapezoid)."""
    a, b = problem.domain
    if cfg.sampler == "equidistant":
        return np.linspace(a, b, cfg.n_interior)
    ps = quadrature.sample(cfg.sampler, cfg.n_interior, problem.domain, seed=cfg.seed)
    if cfg.integration == "trapezoid":
        return quadrature.sorted_with_endpoints(ps.points, problem.domain)
    return np.sort(ps.points)


def dem_energy_bar(problem, points, u, du, rule, u_right=None):
    """Potential energy Pi = int(W - f u) dX - T u(b) from (u, du) fields.

    Fields may be Vars or arrays. ``u_right`` is the displacement at the right
    end; when omitted the last point must be the right end (trapezoid sets).
    """
    mat = problem.material
    strain_arg = 1.0 + du if mat.tag == "nonlinear-A" else du
    W = mechanics.energy_1d(mat, strain_arg)
    f_vals = np.asarray(problem.body_force(points), dtype=np.float64).reshape(-1, 1)
    a, b = problem.domain
    traction = float(problem.traction)
    if isinstance(W, ad.Var):
        integrand = W - W.tape.const(f_vals) * u
        if rule == "trapezoid":
            pi = trapezoid_var(integrand, points)
        else:
            pi = ((b - a) / len(points)) * ad.sum_all(integrand)
        if traction:
            ur = u[-1:, :] if u_right is None else u_right
            pi = pi - traction * ad.sum_all(ur)
        return pi
    integrand = (np.asarray(W) - f_vals * np.asarray(u).reshape(-1, 1)).ravel()
    if rule == "trapezoid":
        pi = quadrature.trapezoid_1d(integrand, points)
    else:
        pi = quadrature.mc_integrate(integrand, b - a)
    if traction:
        ur = float(np.asarray(u).ravel()[-1]) if u_right is None else float(np.asarray(u_right))
        pi -= traction * ur
    return pi


def dem_closure(mlp, problem, points, rule):
    need_right = rule != "trapezoid" and float(problem.traction) != 0.0
    right = np.array([problem.domain[1]])

    def fun(flat):
        tape = ad.Tape()
        fv = tape.var(flat)
        try:
            u, du = bar_fields(tape, fv, mlp.widths, mlp.activations, points, transform=True, order=1)
            u_right = None
            if need_right:
                u_right, _ = bar_fields(tape, fv, mlp.widths, mlp.activations, right, transform=True, order=1)
            loss = dem_energy_bar(problem, points, u, du, rule, u_right=u_right)
        except ad.AdError:
            return np.inf, np.zeros_like(flat)
        return float(loss.value), ad.gradient(loss, fv).value.copy()

    return fun


def dem_loss(mlp, problem, cfg: NeuralFemConfig):
    """Energy loss Var of a 1D model under the configured rule (fresh tape)."""
    points = dem_points(problem, cfg)
    tape = ad.Tape()
    flat = tape.var(mlp.get_flat())
    u, du = bar_fields(tape, flat, mlp.widths, mlp.activations, points, transform=True, order=1)
    u_right = None
    if cfg.integration != "trapezoid" and float(problem.traction) != 0.0:
        u_right, _ = bar_fields(tape, flat, mlp.widths, mlp.activations,
                                np.array([problem.domain[1]]), transform=True, order=1)
    return dem_energy_bar(problem, points, u, du, cfg.integration, u_right=u_right)


def _validation_residual(mlp, problem, n_val=100, seed=977):
    """Mean squared (scale-free) strong residual on held-out points."""
    rng = np.random.default_rng(seed)
    Xv = rng.uniform(-1.0, 1.0, n_val)
    tape = ad.Tape()
    flat = tape.var(mlp.get_flat(), requires_grad=False)
    u, du, d2u = bar_fields(tape, flat, mlp.widths, mlp.activations, Xv, transform=True, order=2)
    if problem.name == "a":
        r = mechanics.residual_a(tape.const(Xv.reshape(-1, 1)), du, d2u)
        return float(np.mean(np.square(r.value)))
    ea = problem.material.modulus * problem.material.area
    f = np.asarray(problem.body_force(Xv), dtype=np.float64).reshape(-1, 1)
    r = -ea * d2u.value - f
    return float(np.mean(np.square(r / ea)))


def train_dem(problem=None, cfg: NeuralFemConfig | None = None) -> TrainResult:
    """Train DEM on a bar problem; 2D plates use train_dem_2d."""
    problem = problem or mechanics.example_a()
    cfg = cfg or NeuralFemConfig(n_interior=1000)
    points = dem_points(problem, cfg)
    mlp = network.build_mlp(cfg.widths, cfg.activation, network.InitScheme(seed=cfg.seed))
    fun = dem_closure(mlp, problem, points, cfg.integration)
    x, retries = _admissible_init(mlp, fun)

    val_hist = []
    best = {"val": np.inf, "x": x.copy(), "since": 0}

    def callback(it, xk, fk):
        if not cfg.early_stopping:
            return False
        mlp.set_flat(xk)
        v = _validation_residual(mlp, problem, cfg.n_val)
        val_hist.append(v)
        if v < best["val"]:
            best.update(val=v, x=xk.copy(), since=0)
        else:
            best["since"] += 1
        return best["since"] > cfg.patience

    t0 = time.perf_counter()
    history = optim.minimize(fun, x, cfg.optim_config(), callback=callback)
    seconds = time.perf_counter() - t0
    if cfg.early_stopping and np.isfinite(best["val"]):
        x[...] = best["x"]
    mlp.set_flat(x)
    extras = {"validation": val_hist} if val_hist else {}
    result = TrainResult(mlp, history, _bar_metrics(mlp, problem, transform=True), seconds, cfg.seed, extras)
    result.metrics["retries"] = retries
    return result


def mdem_loss(u_fields, stress_values, problem, points, rule):
    """Energy loss plus the constitutive penalty V/N * sum ||P_model - dW/dF||^2."""
    u, du = u_fields
    base = dem_energy_bar(problem, points, u, du, rule)
    mat = problem.material
    strain_arg = 1.0 + du if mat.tag == "nonlinear-A" else du
    p_ref = mechanics.stress_1d(mat, strain_arg)
    diff = stress_values - p_ref
    volume = problem.domain[1] - problem.domain[0]
    if isinstance(diff, ad.Var):
        return base + (volume / diff.value.shape[0]) * ad.sum_all(diff * diff)
    diff = np.asarray(diff)
    return base + volume / diff.shape[0] * float(np.sum(np.square(diff)))


# ---------------------------------------------------------------------------
# 2D plate: DEM and DCM
# ---------------------------------------------------------------------------


def plate_fields(tape, flat, widths, activations, X_np, material=None):
    """Transformed displacement and its gradient at X_np (B, 2).

    Returns (u, grad_u, X_var) or (u, grad_u, fields, X_var) when a material
    is given; grad_u components are (B, 1) Vars from taped backward passes.
    """
    pv = unflatten_params(flat, widths)
    X = tape.var(np.asarray(X_np, dtype=np.float64), requires_grad=True)
    z = network.forward_vars(X, pv, activations)
    u = X[:, 0:1] * z
    gx = ad.gradient(ad.sum_all(u[:, 0:1]), X, create_graph=True)
    gy = ad.gradient(ad.sum_all(u[:, 1:2]), X, create_graph=True)
    grad_u = (gx[:, 0:1], gx[:, 1:2], gy[:, 0:1], gy[:, 1:2])
    if material is None:
        return u, grad_u, X
    return u, grad_u, mechanics.neo_hookean_fields(material, grad_u), X


def plate_quadrature(cfg, problem, n_edge=200):
    """(interior PointSet, right-edge points) for the configured rule."""
    (ax, bx), (ay, by) = problem.domain
    if cfg.integration == "trapezoid":
        ps = quadrature.sample("equidistant", cfg.n_interior, problem.domain)
        edge_y = np.linspace(ay, by, n_edge)
    else:
        ps = quadrature.sample(cfg.sampler, cfg.n_interior, problem.domain, seed=cfg.seed)
        edge_y = np.sort(quadrature.sample(cfg.sampler, n_edge, (ay, by), seed=cfg.seed + 1).points)
    edge = np.column_stack([np.full_like(edge_y, bx), edge_y])
    return ps, edge


def dem_loss_2d(tape, flat, widths, activations, problem, ps, edge, rule):
    """Pi = int W dA - int_right T.u ds (body force is zero for the plate)."""
    _, _, nh, _ = plate_fields(tape, flat, widths, activations, ps.points, material=problem.material)
    W = nh["W"]
    (ax, bx), (ay, by) = problem.domain
    if rule == "trapezoid":
        nx, ny = ps.grid_shape
        Wg = ad.reshape(W, (nx, ny))
        hx, hy = (bx - ax) / (nx - 1), (by - ay) / (ny - 1)
        cells = (Wg[:-1, :-1] + Wg[1:, :-1] + Wg[:-1, 1:] + Wg[1:, 1:]) * 0.25
        internal = ad.sum_all(cells) * (hx * hy)
    else:
        volume = (bx - ax) * (by - ay)
        internal = (volume / W.value.shape[0]) * ad.sum_all(W)

    pv = unflatten_params(flat, widths)
    Xe = tape.const(edge)
    ue = Xe[:, 0:1] * network.forward_vars(Xe, pv, activations)
    tx, ty = problem.traction
    t_dot_u = tx * ue[:, 0:1] + ty * ue[:, 1:2]
    if rule == "trapezoid":
        external = trapezoid_var(t_dot_u, edge[:, 1])
    else:
        external = ((by - ay) / edge.shape[0]) * ad.sum_all(t_dot_u)
    return internal - external


def train_dem_2d(problem=None, cfg: NeuralFemConfig | None = None) -> TrainResult:
    problem = problem or mechanics.example_c1()
    cfg = cfg or NeuralFemConfig(widths=[2, 30, 30, 2], n_interior=10_000, integration="mc",
                                 epochs=30, tol_change=1e-13)
    ps, edge = plate_quadrature(cfg, problem)
    mlp = network.build_mlp(cfg.widths, cfg.activation, network.InitScheme(seed=cfg.seed))

    def fun(flat):
        tape = ad.Tape()
        fv = tape.var(flat)
        try:
            loss = dem_loss_2d(tape, fv, mlp.widths, mlp.activations, problem, ps, edge, cfg.integration)
        except ad.AdError:
            return np.inf, np.zeros_like(flat)
        return float(loss.value), ad.gradient(loss, fv).value.copy()

    x, _ = _admissible_init(mlp, fun)
    t0 = time.perf_counter()
    history = optim.minimize(fun, x, cfg.optim_config())
    seconds = time.perf_counter() - t0
    mlp.set_flat(x)
    final = history.losses[-1] if history.losses else np.nan
    return TrainResult(mlp, history, {"final_energy": final}, seconds, cfg.seed)


def dcm_loss_2d(tape, flat, widths, activations, problem, interior, edge, penalty=1.0,
                include_residual=True):
    """Momentum-residual + traction-penalty loss of the collocation method."""
    loss = penalty * traction_mismatch_terms(tape, flat, widths, activations, problem, edge)
    if include_residual:
        _, _, nh, X_var = plate_fields(tape, flat, widths, activations, interior,
                                       material=problem.material)
        divx = _div_row(nh["Pxx"], nh["Pxy"], X_var)
        divy = _div_row(nh["Pyx"], nh["Pyy"], X_var)
        loss = mean_sq(divx) + mean_sq(divy) + loss
    return loss


def _div_row(p_left, p_right, X_var):
    gl = ad.gradient(ad.sum_all(p_left), X_var, create_graph=True)
    gr = ad.gradient(ad.sum_all(p_right), X_var, create_graph=True)
    return gl[:, 0:1] + gr[:, 1:2]


def traction_mismatch_terms(tape, flat, widths, activations, problem, edge):
    """Mean squared P.N - T over right-edge points (N = e_x)."""
    _, _, nh, _ = plate_fields(tape, flat, widths, activations, edge, material=problem.material)
    tx, ty = problem.traction
    return mean_sq(nh["Pxx"] - tx) + mean_sq(nh["Pyx"] - ty)


def traction_mismatch(mlp, problem, edge):
    tape = ad.Tape()
    flat = tape.var(mlp.get_flat(), requires_grad=False)
    return float(traction_mismatch_terms(tape, flat, mlp.widths, mlp.activations, problem, edge).value)


def train_dcm_2d(problem=None, cfg: NeuralFemConfig | None = None, include_residual=True) -> TrainResult:
    problem = problem or mechanics.example_c1()
    cfg = cfg or NeuralFemConfig(widths=[2, 30, 30, 2], n_interior=4000, epochs=30, tol_change=1e-13)
    interior = quadrature.sample("lhs", cfg.n_interior, problem.domain, seed=cfg.seed).points
    (_, bx), (ay, by) = problem.domain
    ey = quadrature.sample("lhs", 900, (ay, by), seed=cfg.seed + 1).points
    edge = np.column_stack([np.full_like(ey, bx), ey])
    mlp = network.build_mlp(cfg.widths, cfg.activation, network.InitScheme(seed=cfg.seed))
    x = mlp.get_flat()

    def fun(flat):
        tape = ad.Tape()
        fv = tape.var(flat)
        try:
            loss = dcm_loss_2d(tape, fv, mlp.widths, mlp.activations, problem, interior, edge,
                               penalty=cfg.lambda_b, include_residual=include_residual)
        except ad.AdError:
            return np.inf, np.zeros_like(flat)
        return float(loss.value), ad.gradient(loss, fv).value.copy()

    t0 = time.perf_counter()
    history = optim.minimize(fun, x, cfg.optim_config())
    seconds = time.perf_counter() - t0
    mlp.set_flat(x)
    comps = dcm_loss_components(mlp, problem, interior, edge)
    return TrainResult(mlp, history, comps, seconds, cfg.seed, extras={"edge": edge, "interior": interior})


def dcm_loss_components(mlp, problem, interior, edge):
    """Separate residual / boundary portions of the DCM loss at the current params."""
    tape = ad.Tape()
    fv = tape.var(mlp.get_flat(), requires_grad=False)
    try:
        _, _, nh, X_var = plate_fields(tape, fv, mlp.widths, mlp.activations, interior,
                                       material=problem.material)
        res = float((mean_sq(_div_row(nh["Pxx"], nh["Pxy"], X_var))
                     + mean_sq(_div_row(nh["Pyx"], nh["Pyy"], X_var))).value)
    except ad.AdError:
        res = np.nan
    return {"residual": res, "boundary": traction_mismatch(mlp, problem, edge)}


def evaluate_plate_model(mlp, problem, nx=160, ny=40):
    """Displacement and stress fields on a fixed evaluation grid (numpy)."""
    (ax, bx), (ay, by) = problem.domain
    xs, ys = np.linspace(ax, bx, nx), np.linspace(ay, by, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    tape = ad.Tape()
    flat = tape.var(mlp.get_flat(), requires_grad=False)
    u, _, nh, _ = plate_fields(tape, flat, mlp.widths, mlp.activations, pts, material=problem.material)
    out = {"points": pts, "grid_shape": (nx, ny), "u": u.value.copy()}
    for key in ("W", "SE", "Pxx", "Pyx", "J"):
        out[key] = nh[key].value.ravel().copy()
    return out


def plate_energy(mlp, problem, nx=400, ny=100):
    """Potential energy of a trained field on a common fine trapezoid grid."""
    cfg = NeuralFemConfig(widths=mlp.widths, n_interior=nx * ny, integration="trapezoid")
    ps, edge = plate_quadrature(cfg, problem, n_edge=ny)
    tape = ad.Tape()
    flat = tape.var(mlp.get_flat(), requires_grad=False)
    return float(dem_loss_2d(tape, flat, mlp.widths, mlp.activations, problem, ps, edge, "trapezoid").value)


# ---------------------------------------------------------------------------
# competitive PINN
# ---------------------------------------------------------------------------


def cpinn_loss(tape, theta_flat, phi_flat, widths_u, acts_u, widths_d, acts_d, X_f, lambda_b=1.0):
    """Zero-sum objective: mean(residual * d_B) + lambda_b * mean(boundary * d_G).

    The two discriminator outputs are split: channel 0 weighs the interior
    residual, channel 1 the two boundary operators.
    """
    u, du, d2u = bar_fields(tape, theta_flat, widths_u, acts_u, X_f, transform=False)
    r = mechanics.residual_a(tape.const(X_f.reshape(-1, 1)), du, d2u)
    pv_d = unflatten_params(phi_flat, widths_d)
    d_int = network.forward_vars(tape.const(X_f.reshape(-1, 1)), pv_d, acts_d)
    interior = ad.mean_all(r * d_int[:, 0:1])

    Xb = np.array([-1.0, 1.0])
    u_b, du_b = bar_fields(tape, theta_flat, widths_u, acts_u, Xb, transform=False, order=1)
    b_terms = ad.concat([u_b[0:1, :], du_b[1:2, :]], axis=0)  # u(-1), u'(1)
    d_b = network.forward_vars(tape.const(Xb.reshape(-1, 1)), pv_d, acts_d)
    boundary = ad.mean_all(b_terms * d_b[:, 1:2])
    return interior + lambda_b * boundary


def train_cpinn(h=50, n_colloc=100, seed=0, epochs=6000, eta=1e-3, lambda_b=1.0,
                max_retries=3, cg_iters=16) -> TrainResult:
    """Train the residual game with competitive gradient descent.

    A domain error at initialization (inadmissible stretch) retries with the
    parameter range narrowed by 0.5, up to ``max_retries`` times; the retry
    count lands in the metrics.
    """
    problem = mechanics.example_a()
    widths_u, widths_d = [1, 10, 1], [1, h, 2]
    acts_u, acts_d = ["tanh", "identity"], ["relu", "identity"]
    X_f = quadrature.sample("lhs", n_colloc, problem.domain, seed=seed).points

    cfg = optim.OptimConfig(kind="cgd", cgd_eta=eta, beta2=0.99, cgd_cg_iters=cg_iters)
    retries, scale = 0, 1.0
    while True:
        u_net = network.build_mlp(widths_u, acts_u, network.InitScheme(seed=seed))
        d_net = network.build_mlp(widths_d, acts_d, network.InitScheme(seed=seed + 7919))
        if scale != 1.0:
            u_net.set_flat(u_net.get_flat() * scale)
            d_net.set_flat(d_net.get_flat() * scale)
        try:
            tape = ad.Tape()
            cpinn_loss(tape, tape.var(u_net.get_flat()), tape.var(d_net.get_flat()),
                       widths_u, acts_u, widths_d, acts_d, X_f, lambda_b)
            break
        except ad.AdError:
            retries += 1
            scale *= 0.5
            if retries > max_retries:
                raise

    theta, phi = u_net.get_flat(), d_net.get_flat()

    def closure(t_arr, p_arr):
        tape = ad.Tape()
        tv, pv = tape.var(t_arr), tape.var(p_arr)
        loss = cpinn_loss(tape, tv, pv, widths_u, acts_u, widths_d, acts_d, X_f, lambda_b)
        return loss, tv, pv

    history = optim.LossHistory()
    state = optim.CgdState(theta.size, phi.size, cfg)
    t0 = time.perf_counter()
    for ep in range(epochs):
        t1 = time.perf_counter()
        try:
            loss_val, info = optim.cgd_step(closure, theta, phi, cfg, state)
        except ad.AdError:
            history.termination = "diverged"
            history.flags.append(f"domain error at epoch {ep}")
            break
        history.losses.append(loss_val)
        history.lrs.append(eta)
        history.seconds.append(time.perf_counter() - t1)
        if info["fallback"]:
            history.flags.append(f"cg fallback at epoch {ep}")
    seconds = time.perf_counter() - t0
    u_net.set_flat(theta)
    d_net.set_flat(phi)
    result_metrics = _bar_metrics(u_net, problem, transform=False)
    result_metrics["retries"] = retries
    return TrainResult(u_net, history, result_metrics, seconds, seed, extras={"discriminator": d_net})


# ---------------------------------------------------------------------------
# transfer learning over the Neumann parameter
# ---------------------------------------------------------------------------


def transfer_sweep(pi2_values, warm_start=True, n_colloc=1000, seed=0, epochs=15,
                   widths=(1, 10, 1)) -> dict:
    """Sequential DEM trainings over a sorted pi2 grid.

    With warm_start, each run starts from the previous parameters; the
    convergence-based termination then turns the better initialization into
    shorter runs. The integration points are shared across the sweep so only
    the initialization differs between modes.
    """
    pi2_values = np.sort(np.asarray(pi2_values, dtype=np.float64))
    base = mechanics.example_b2(pi2=0.0)
    cfg0 = NeuralFemConfig(widths=list(widths), n_interior=n_colloc, seed=seed,
                           epochs=epochs, integration="trapezoid", tol_change=1e-12)
    points = dem_points(base, cfg0)
    errors, times, iters = [], [], []
    carry = None
    total0 = time.perf_counter()
    for i, p in enumerate(pi2_values):
        problem = mechanics.example_b2(pi2=float(p))
        init_seed = seed if warm_start else seed + i
        mlp = network.build_mlp(cfg0.widths, cfg0.activation, network.InitScheme(seed=init_seed))
        if warm_start and carry is not None:
            mlp.set_flat(carry)
        x = mlp.get_flat()
        fun = dem_closure(mlp, problem, points, cfg0.integration)
        t0 = time.perf_counter()
        hist = optim.minimize(fun, x, cfg0.optim_config())
        times.append(time.perf_counter() - t0)
        iters.append(len(hist.losses))
        mlp.set_flat(x)
        carry = x.copy()
        errors.append(_bar_metrics(mlp, problem, transform=True)["rel_l2_u"])
    return {
        "pi2": pi2_values,
        "rel_l2_u": np.array(errors),
        "seconds": np.array(times),
        "iterations": np.array(iters),
        "total_seconds": time.perf_counter() - total0,
    }


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def grad_histogram(loss_components, flat_var, widths, bins=50):
    """Per-component, per-layer histograms of parameter gradients.

    ``loss_components`` maps names to scalar Vars on ``flat_var``'s tape.
    Returns {component: {layer index: (counts, bin_edges)}}.
    """
    sizes = [(n_in * n_out, n_out) for n_in, n_out in zip(widths[:-1], widths[1:])]
    out = {}
    for name, comp in loss_components.items():
        g = ad.gradient(comp, flat_var).value
        layers, off = {}, 0
        for i, (wsz, bsz) in enumerate(sizes):
            seg = g[off : off + wsz + bsz]
            off += wsz + bsz
            counts, edges = np.histogram(seg, bins=bins)
            layers[i] = (counts, edges)
        out[name] = layers
    return out
