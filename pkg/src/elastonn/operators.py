"""Operator-learning models: DeepONet, physics-informed DeepONet, the Fourier
neural operator and its physics-informed variant, plus zero-shot
super-resolution evaluation.

The spectral layers act on the lowest ``modes`` nonnegative frequencies only,
applied through constant cosine/sine basis matrices (a matmul is as cheap as
an FFT at 16 modes and keeps the whole model differentiable on the tape).
Frequencies are per domain cycle, so a trained model evaluates on any grid
resolution; zero padding for the non-periodic inputs is a fixed fraction of
the resolution for the same reason.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import autodiff as ad
from . import metrics, network, optim
from .femref import Fem1d, GpSampler, OperatorDataset

FNO_MODES = 16
FNO_BLOCKS = 4
FNO_PROJ_HIDDEN = 128
FNO_PAD_FRAC = 1.0 / 16.0  # 64 samples at the 1024-point training resolution


# ---------------------------------------------------------------------------
# DeepONet
# ---------------------------------------------------------------------------


@dataclass
class DeepOnet:
    branch: network.Mlp
    trunk: network.Mlp

    def __post_init__(self):
        if self.branch.widths[-1] != self.trunk.widths[-1]:
            raise ValueError("branch and trunk output widths must match")

    @property
    def n_params(self):
        return self.branch.n_params + self.trunk.n_params

    def get_flat(self):
        return np.concatenate([self.branch.get_flat(), self.trunk.get_flat()])

    def set_flat(self, flat):
        nb = self.branch.n_params
        self.branch.set_flat(flat[:nb])
        self.trunk.set_flat(flat[nb:])


def build_deeponet(m=20, width=100, activation="relu", seed=0, trunk_in=1) -> DeepOnet:
    return DeepOnet(
        branch=network.build_mlp([m, width, width], activation, network.InitScheme(seed=seed)),
        trunk=network.build_mlp([trunk_in, width, width], activation, network.InitScheme(seed=seed + 1)),
    )


def _split_params(flat, model: DeepOnet):
    nb = model.branch.n_params
    bv = neural_unflatten(flat[:nb], model.branch.widths)
    tv = neural_unflatten(flat[nb : nb + model.trunk.n_params], model.trunk.widths)
    return bv, tv


def neural_unflatten(flat, widths):
    pv, off = [], 0
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        w = ad.reshape(flat[off : off + n_in * n_out], (n_out, n_in))
        off += n_in * n_out
        b = flat[off : off + n_out]
        off += n_out
        pv.append((w, b))
    return pv


def deeponet_forward(model: DeepOnet, sensors, X):
    """u = branch(y) . trunk(X); accepts (m,) or (B, m) sensors and scalar/array X."""
    sensors = np.atleast_2d(np.asarray(sensors, dtype=np.float64))
    if sensors.shape[1] != model.branch.widths[0]:
        raise ValueError(f"expected {model.branch.widths[0]} sensors, got {sensors.shape[1]}")
    X = np.atleast_1d(np.asarray(X, dtype=np.float64))
    tape = ad.Tape()
    b = network.forward(model.branch, sensors, tape)
    t = network.forward(model.trunk, X.reshape(-1, model.trunk.widths[0]), tape)
    out = b.value @ t.value.T  # (B, n_x)
    return out[0] if out.shape[0] == 1 else out


def deeponet_grid_eval(model: DeepOnet, sensors, grid, order=0):
    """Predictions (and strains via trunk input derivatives) on a shared grid."""
    tape = ad.Tape()
    bflat = tape.var(model.branch.get_flat(), requires_grad=False)
    tflat = tape.var(model.trunk.get_flat(), requires_grad=False)
    bv = neural_unflatten(bflat, model.branch.widths)
    tv = neural_unflatten(tflat, model.trunk.widths)
    b = network.forward_vars(tape.const(np.atleast_2d(sensors)), bv, model.branch.activations).value
    Xg = np.asarray(grid, dtype=np.float64).reshape(-1, 1)
    if order == 0:
        t = network.forward_vars(tape.const(Xg), tv, model.trunk.activations).value
        return b @ t.T
    t, dt = network.forward_with_tangents(tape.const(Xg), tv, model.trunk.activations, order=1)
    return b @ t.value.T, b @ dt.value.T


@dataclass
class OperatorResult:
    model: object
    losses: list
    metrics: dict
    seconds: float
    seed: int
    extras: dict = field(default_factory=dict)


def _deeponet_data_loss(tape, model, bv, tv, ds, loss_kind):
    branch = network.forward_vars(tape.const(ds.sensors), bv, model.branch.activations)  # (N, K)
    n, p = ds.eval_x.shape
    trunk = network.forward_vars(tape.const(ds.eval_x.reshape(-1, 1)), tv, model.trunk.activations)
    k = model.trunk.widths[-1]
    trunk3 = ad.reshape(trunk, (n, p, k))
    pred = ad.sum_axis(ad.reshape(branch, (n, 1, k)) * trunk3, 2)  # (N, P)
    diff = pred - tape.const(ds.eval_u)
    if loss_kind == "mse":
        return ad.mean_all(diff * diff)
    row = ad.sqrt(ad.sum_axis(diff * diff, 1))
    ref = np.sqrt(np.sum(ds.eval_u**2, axis=1))
    return ad.mean_all(row * tape.const(1.0 / np.maximum(ref, 1e-300)))


def _physics_terms(tape, model, bv, tv, ds, n_residual=None):
    """Interior residual at the sensor locations + both boundary operators.

    residual: -u''(X_j) - f(X_j) with f known exactly at the sensors;
    boundary: u(-1) = 0 and u'(1) = pi2 (0 for load-field datasets).
    """
    branch = network.forward_vars(tape.const(ds.sensors), bv, model.branch.activations)  # (N, K)
    if ds.mode == "neumann-pi2":
        xs = np.linspace(-1.0, 1.0, n_residual or 100)
        f_at = np.ones((ds.n_cases, xs.size))
        pi2 = ds.pi2
    else:
        xs = ds.grid[ds.sensor_idx]
        f_at = ds.sensors
        pi2 = np.zeros(ds.n_cases)
    _, _, ddt = network.forward_with_tangents(tape.const(xs.reshape(-1, 1)), tv,
                                              model.trunk.activations, order=2)
    d2u = ad.matmul(branch, ad.transpose(ddt))  # (N, n_x)
    residual = -d2u - tape.const(f_at)
    interior = ad.mean_all(residual * residual)

    ends = np.array([[-1.0], [1.0]])
    t_e, dt_e = network.forward_with_tangents(tape.const(ends), tv, model.trunk.activations, order=1)
    u_left = ad.matmul(branch, ad.transpose(t_e[0:1, :]))
    du_right = ad.matmul(branch, ad.transpose(dt_e[1:2, :])) - tape.const(pi2.reshape(-1, 1))
    boundary = ad.mean_all(ad.concat([u_left * u_left, du_right * du_right], axis=0))
    return interior, boundary


def pideeponet_loss(tape, model, bv, tv, ds, data_weight=1.0, loss_kind="mse", n_residual=None):
    """Data term + squared interior residual + squared boundary residual."""
    interior, boundary = _physics_terms(tape, model, bv, tv, ds, n_residual)
    loss = interior + boundary
    if data_weight:
        loss = data_weight * _deeponet_data_loss(tape, model, bv, tv, ds, loss_kind) + loss
    return loss


def _lbfgs_closure(model, loss_builder):
    def fun(flat):
        tape = ad.Tape()
        fv = tape.var(flat)
        bv, tv = _split_params(fv, model)
        loss = loss_builder(tape, bv, tv)
        return float(loss.value), ad.gradient(loss, fv).value.copy()

    return fun


def _eval_operator_errors(model, ds_test):
    up, dup = deeponet_grid_eval(model, ds_test.sensors if ds_test.mode != "neumann-pi2" else ds_test.pi2.reshape(-1, 1),
                                 ds_test.grid, order=1)
    mu, med_u, ratios_u = metrics.rel_l2_dataset(up, ds_test.grid_u)
    mdu, med_du, ratios_du = metrics.rel_l2_dataset(dup, ds_test.grid_du)
    return {
        "rel_l2_u_mean": mu, "rel_l2_u_median": med_u,
        "rel_l2_du_mean": mdu, "rel_l2_du_median": med_du,
        "per_case_u": ratios_u, "per_case_du": ratios_du,
    }


def train_deeponet(ds_train: OperatorDataset, ds_test: OperatorDataset, loss="mse",
                   batch="full", epochs=120, seed=0, history_size=50, lr=1.0) -> OperatorResult:
    """L-BFGS (strong Wolfe) regression of the solution operator on FEM data."""
    model = build_deeponet(m=ds_train.sensors.shape[1], activation="relu", seed=seed)
    flat = model.get_flat()
    if batch == "full":
        fun = _lbfgs_closure(model, lambda tape, bv, tv: _deeponet_data_loss(tape, model, bv, tv, ds_train, loss))
        cfg = optim.OptimConfig(kind="lbfgs", lr=lr, max_iter=epochs * 20, history_size=history_size)
        t0 = time.perf_counter()
        hist = optim.minimize(fun, flat, cfg)
        seconds = time.perf_counter() - t0
        losses = hist.losses
    else:  # sequential L-BFGS passes over mini-batches of entries
        losses = []
        rng = np.random.default_rng(seed)
        n, p = ds_train.eval_x.shape
        t0 = time.perf_counter()
        for ep in range(epochs):
            rows = rng.permutation(n)
            for chunk in np.array_split(rows, max(1, n * p // 1000 // p)):
                sub = _subset(ds_train, chunk)
                fun = _lbfgs_closure(model, lambda tape, bv, tv, s=sub: _deeponet_data_loss(tape, model, bv, tv, s, loss))
                h = optim.minimize(fun, flat, optim.OptimConfig(kind="lbfgs", lr=lr, max_iter=20,
                                                                history_size=history_size))
                losses.extend(h.losses)
        seconds = time.perf_counter() - t0
    model.set_flat(flat)
    result_metrics = _eval_operator_errors(model, ds_test)
    return OperatorResult(model, losses, result_metrics, seconds, seed)


def _subset(ds, rows):
    import copy

    sub = copy.copy(ds)
    for name in ("sensors", "eval_x", "eval_u", "grid_f", "grid_u", "grid_du"):
        setattr(sub, name, getattr(ds, name)[rows])
    if ds.pi2 is not None:
        sub.pi2 = ds.pi2[rows]
    return sub


def train_pideeponet(ds_train, ds_test, epochs=120, seed=0, history_size=50, lr=1.0,
                     data_weight=1.0, loss="mse") -> OperatorResult:
    """Tanh DeepONet trained with the physics-extended loss."""
    model = build_deeponet(m=ds_train.sensors.shape[1], activation="tanh", seed=seed)
    flat = model.get_flat()
    fun = _lbfgs_closure(model, lambda tape, bv, tv: pideeponet_loss(tape, model, bv, tv, ds_train,
                                                                     data_weight, loss))
    cfg = optim.OptimConfig(kind="lbfgs", lr=lr, max_iter=epochs * 20, history_size=history_size)
    t0 = time.perf_counter()
    hist = optim.minimize(fun, flat, cfg)
    seconds = time.perf_counter() - t0
    model.set_flat(flat)
    result_metrics = _eval_operator_errors(model, ds_test)
    return OperatorResult(model, hist.losses, result_metrics, seconds, seed)


def train_neumann_pideeponet(ds_train, epochs=40, seed=0, width=50, history_size=50, lr=1.0,
                             n_residual=100, pi2_test=None, n_grid=1000) -> OperatorResult:
    """Neumann-parameterized operator: branch input is the scalar pi2."""
    from . import mechanics

    model = build_deeponet(m=1, width=width, activation="tanh", seed=seed)
    flat = model.get_flat()
    fun = _lbfgs_closure(model, lambda tape, bv, tv: pideeponet_loss(tape, model, bv, tv, ds_train,
                                                                     1.0, "mse", n_residual))
    cfg = optim.OptimConfig(kind="lbfgs", lr=lr, max_iter=epochs * 20, history_size=history_size)
    t0 = time.perf_counter()
    hist = optim.minimize(fun, flat, cfg)
    train_seconds = time.perf_counter() - t0
    model.set_flat(flat)

    pi2_test = np.linspace(0.0, 1.0, 101) if pi2_test is None else np.asarray(pi2_test, float)
    grid = np.linspace(-1.0, 1.0, n_grid)
    t1 = time.perf_counter()
    pred, dpred = deeponet_grid_eval(model, pi2_test.reshape(-1, 1), grid, order=1)
    infer_seconds = time.perf_counter() - t1
    ref = np.stack([mechanics.analytic_b2_neumann(grid, p) for p in pi2_test])
    dref = np.stack([mechanics.analytic_b2_neumann_strain(grid, p) for p in pi2_test])
    mu, med_u, ratios = metrics.rel_l2_dataset(pred, ref)
    mdu, med_du, _ = metrics.rel_l2_dataset(dpred, dref)
    return OperatorResult(model, hist.losses, {
        "rel_l2_u_mean": mu, "rel_l2_u_median": med_u,
        "rel_l2_du_mean": mdu, "rel_l2_du_median": med_du,
        "per_case_u": ratios, "pi2_test": pi2_test,
        "train_seconds": train_seconds, "infer_seconds": infer_seconds,
    }, train_seconds, seed)


# ---------------------------------------------------------------------------
# FNO / PINO
# ---------------------------------------------------------------------------


@dataclass
class FnoModel:
    d_v: int
    modes: int = FNO_MODES
    n_blocks: int = FNO_BLOCKS
    proj_hidden: int = FNO_PROJ_HIDDEN
    pad_frac: float = FNO_PAD_FRAC
    params: np.ndarray = None  # flat parameter vector
    norm: dict = field(default_factory=lambda: {"f_mean": 0.0, "f_std": 1.0, "x_mean": 0.0, "x_std": 1.0})

    @property
    def n_params(self):
        d, m, h = self.d_v, self.modes, self.proj_hidden
        lift = 2 * d + d
        block = 2 * m * d * d + d * d + d
        proj = h * d + h + h + 1
        return lift + self.n_blocks * block + proj

    def layout(self):
        """(name, shape) slices of the flat parameter vector, in order."""
        d, m, h = self.d_v, self.modes, self.proj_hidden
        entries = [("P_w", (d, 2)), ("P_b", (d,))]
        for t in range(self.n_blocks):
            entries += [(f"R{t}_re", (m, d, d)), (f"R{t}_im", (m, d, d)),
                        (f"W{t}_w", (d, d)), (f"W{t}_b", (d,))]
        entries += [("Q1_w", (h, d)), ("Q1_b", (h,)), ("Q2_w", (1, h)), ("Q2_b", (1,))]
        return entries


def build_fno(d_v, seed=0, **kwargs) -> FnoModel:
    """Spectral weights ~ U(0, 1/d_v^2); pointwise layers fan-in uniform."""
    model = FnoModel(d_v=d_v, **kwargs)
    rng = np.random.default_rng(seed)
    chunks = []
    for name, shape in model.layout():
        size = int(np.prod(shape))
        if name.startswith("R"):
            chunks.append(rng.uniform(0.0, 1.0 / (model.d_v**2), size))
        elif name.endswith("_w"):
            fan_in = shape[1]
            bound = np.sqrt(1.0 / fan_in)
            chunks.append(rng.uniform(-bound, bound, size))
        else:
            fan_in = {"P_b": 2, "Q1_b": model.d_v, "Q2_b": model.proj_hidden}.get(name, model.d_v)
            bound = np.sqrt(1.0 / fan_in)
            chunks.append(rng.uniform(-bound, bound, size))
    model.params = np.concatenate(chunks)
    assert model.params.size == model.n_params
    return model


def _fno_param_vars(flat, model):
    out, off = {}, 0
    for name, shape in model.layout():
        size = int(np.prod(shape))
        out[name] = ad.reshape(flat[off : off + size], shape)
        off += size
    return out


def _fourier_bases(n_padded, modes):
    """Combined forward (N, 2K) and inverse (2K, N) truncated DFT bases.

    Forward columns are [cos | -sin] (real/imag parts of the unnormalized
    DFT); inverse rows reconstruct with conjugate symmetry, weight 2 on all
    modes above 0, divided by N.
    """
    n = np.arange(n_padded)
    k = np.arange(modes)
    ang = 2.0 * np.pi * np.outer(n, k) / n_padded  # (N, modes)
    fwd = np.concatenate([np.cos(ang), -np.sin(ang)], axis=1)
    w = np.full(modes, 2.0)
    w[0] = 1.0
    inv = np.concatenate([w[:, None] * np.cos(ang).T, w[:, None] * -np.sin(ang).T], axis=0) / n_padded
    return fwd, inv


def _pointwise_matmul(v, w):
    bs, n, c = v.value.shape
    h = ad.matmul(ad.reshape(v, (bs * n, c)), ad.transpose(w))
    return ad.reshape(h, (bs, n, w.value.shape[0]))


def _pointwise_linear(v, w, b):
    bs, n, c = v.value.shape
    h = ad.matmul(ad.reshape(v, (bs * n, c)), ad.transpose(w)) + b
    return ad.reshape(h, (bs, n, w.value.shape[0]))


def fno_forward_var(tape, flat, model: FnoModel, f_batch, grid):
    """Taped forward pass on a (B, N) batch of input fields over ``grid``.

    Complex spectral weights act on the stacked (re; im) coefficient block:
    [d_re; d_im] = [c_re@R_re - c_im@R_im ; c_im@R_re + c_re@R_im].
    """
    n = f_batch.shape[1]
    if n < 2 * model.modes:
        raise ValueError(f"field length {n} below 2*modes = {2 * model.modes}")
    k = model.modes
    pv = _fno_param_vars(flat, model)
    nm = model.norm
    f_in = (f_batch - nm["f_mean"]) / nm["f_std"]
    x_in = np.broadcast_to((grid - nm["x_mean"]) / nm["x_std"], f_batch.shape)
    stack = np.stack([f_in, x_in], axis=-1)  # (B, N, 2)
    v = _pointwise_linear(tape.const(stack), pv["P_w"], pv["P_b"])
    pad = int(round(model.pad_frac * n))
    if pad:
        v = ad.pad_end(v, pad, axis=1)
    fwd, inv = (tape.const(m) for m in _fourier_bases(n + pad, k))
    for t in range(model.n_blocks):
        c = ad.axis_matmul(v, fwd)  # (B, 2K, C) = [c_re; c_im]
        r_re, r_im = pv[f"R{t}_re"], pv[f"R{t}_im"]
        r_dup = ad.concat([r_re, r_re], axis=0)
        r_mix = ad.concat([ad.neg(r_im), r_im], axis=0)
        c_swap = ad.concat([c[:, k:, :], c[:, :k, :]], axis=1)
        d = ad.mode_matmul(c, r_dup) + ad.mode_matmul(c_swap, r_mix)
        spec = ad.axis_matmul(d, inv)
        v = ad.gelu_sum(spec, _pointwise_matmul(v, pv[f"W{t}_w"]), pv[f"W{t}_b"])
    if pad:
        v = v[:, :n, :]
    h = ad.gelu_sum(_pointwise_matmul(v, pv["Q1_w"]), tape.const(0.0), pv["Q1_b"])
    h = _pointwise_linear(h, pv["Q2_w"], pv["Q2_b"])
    return ad.reshape(h, f_batch.shape)


def fno_forward(model: FnoModel, f_batch, grid):
    """Numpy predictions for a (B, N) batch (or a single (N,) field)."""
    f_batch = np.atleast_2d(np.asarray(f_batch, dtype=np.float64))
    tape = ad.Tape()
    flat = tape.var(model.params, requires_grad=False)
    return fno_forward_var(tape, flat, model, f_batch, np.asarray(grid, float)).value.copy()


def central_diff(values, dx):
    """Second-order derivative of a sampled field (interior centered stencil,
    one-sided 3-point at the ends)."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] < 3:
        raise ValueError("need at least 3 samples")
    return ad._cd_apply(values, dx)


def _trapz_weights(n, dx):
    w = np.full(n, dx)
    w[0] = w[-1] = 0.5 * dx
    return w


def fno_data_loss(pred, targets, tape):
    diff = pred - tape.const(targets)
    row = ad.sqrt(ad.sum_axis(diff * diff, 1))
    ref = np.sqrt(np.sum(targets**2, axis=1))
    return ad.mean_all(row * tape.const(1.0 / np.maximum(ref, 1e-300)))


def pino_energy(pred, f_batch, grid, tape):
    """Mean potential energy of predicted fields: int(0.5 u'^2 - f u) dX.

    u' comes from the second-order finite-difference stencil on the grid, the
    integral from the trapezoid rule; the free right end carries no traction.
    """
    dx = grid[1] - grid[0]
    du = ad.central_diff(pred, dx)
    integrand = 0.5 * du * du - tape.const(f_batch) * pred
    w = tape.const(_trapz_weights(grid.size, dx))
    return ad.mean_all(ad.sum_axis(integrand * w, 1))


def pino_loss(tape, flat, model, f_batch, targets, grid, energy_weight=1.0):
    pred = fno_forward_var(tape, flat, model, f_batch, grid)
    return fno_data_loss(pred, targets, tape) + energy_weight * pino_energy(pred, f_batch, grid, tape)


def train_fno(ds_train: OperatorDataset, ds_test: OperatorDataset, d_v=64, physics=False,
              epochs=500, batch=20, seed=0, lr=1e-3, lr_factor=0.5, lr_every=50,
              weight_decay=1e-4, energy_weight=1.0) -> OperatorResult:
    """Mini-batch Adam with step-decayed learning rate and L2 weight decay."""
    model = build_fno(d_v, seed=seed)
    f_all, u_all, grid = ds_train.grid_f, ds_train.grid_u, ds_train.grid
    model.norm = {"f_mean": float(f_all.mean()), "f_std": float(f_all.std() + 1e-12),
                  "x_mean": float(grid.mean()), "x_std": float(grid.std())}
    flat = model.params
    cfg = optim.OptimConfig(kind="adam", lr=lr, lr_factor=lr_factor, lr_every=lr_every,
                            weight_decay=weight_decay, max_iter=epochs)
    adam = optim.AdamState(flat.size, cfg)
    rng = np.random.default_rng(seed)
    losses = []
    t0 = time.perf_counter()
    for ep in range(epochs):
        lr_ep = optim.lr_schedule(ep, cfg)
        order = rng.permutation(f_all.shape[0])
        ep_loss = 0.0
        for chunk in np.array_split(order, max(1, f_all.shape[0] // batch)):
            tape = ad.Tape()
            fv = tape.var(flat)
            if physics:
                loss = pino_loss(tape, fv, model, f_all[chunk], u_all[chunk], grid, energy_weight)
            else:
                pred = fno_forward_var(tape, fv, model, f_all[chunk], grid)
                loss = fno_data_loss(pred, u_all[chunk], tape)
            g = ad.gradient(loss, fv).value
            adam.step(flat, g, lr=lr_ep)
            ep_loss += float(loss.value) * len(chunk)
        losses.append(ep_loss / f_all.shape[0])
    seconds = time.perf_counter() - t0
    model.params = flat
    result_metrics = evaluate_fno(model, ds_test)
    return OperatorResult(model, losses, result_metrics, seconds, seed)


def evaluate_fno(model: FnoModel, ds: OperatorDataset, batch=25):
    preds = np.concatenate([fno_forward(model, ds.grid_f[i : i + batch], ds.grid)
                            for i in range(0, ds.n_cases, batch)])
    dx = ds.grid[1] - ds.grid[0]
    dpred = central_diff(preds, dx)
    mu, med_u, ratios_u = metrics.rel_l2_dataset(preds, ds.grid_u)
    mdu, med_du, ratios_du = metrics.rel_l2_dataset(dpred, ds.grid_du)
    return {
        "rel_l2_u_mean": mu, "rel_l2_u_median": med_u,
        "rel_l2_du_mean": mdu, "rel_l2_du_median": med_du,
        "per_case_u": ratios_u, "per_case_du": ratios_du,
    }


# ---------------------------------------------------------------------------
# zero-shot super-resolution
# ---------------------------------------------------------------------------


@dataclass
class SuperResReport:
    resolutions: list
    errors: dict  # model name -> list of rel-L2 errors
    train_resolution: int = 1024

    def __post_init__(self):
        if list(self.resolutions) != sorted(set(self.resolutions)):
            raise ValueError("resolutions must be strictly increasing")


def superres_eval(models: dict, resolutions=(256, 512, 1024, 2048, 4096, 8192), seed=123,
                  corr_length=0.1, n_ref=8192, sensor_x=None) -> SuperResReport:
    """Evaluate trained operators across grid resolutions on one fine instance.

    The reference comes from a fine FEM solve (n_ref nodes) and is cubically
    interpolated to every resolution, as is the input field. DeepONet entries
    evaluate pointwise; FNO-family entries re-grid.
    """
    resolutions = sorted(resolutions)
    fine_grid = np.linspace(-1.0, 1.0, n_ref)
    f_fine = GpSampler(fine_grid, corr_length).sample(seed)
    sol = Fem1d(n_elements=n_ref // 2, out_grid=n_ref).solve_linear(f_fine, pi2=0.0)
    f_spline = CubicSpline(fine_grid, f_fine.values)
    u_spline = CubicSpline(fine_grid, sol.u)

    errors = {name: [] for name in models}
    for r in resolutions:
        grid_r = np.linspace(-1.0, 1.0, r)
        f_r, u_r = f_spline(grid_r), u_spline(grid_r)
        for name, model in models.items():
            if isinstance(model, DeepOnet):
                sensors = f_spline(sensor_x) if sensor_x is not None else f_spline(np.linspace(-1, 1, model.branch.widths[0]))
                pred = deeponet_grid_eval(model, sensors.reshape(1, -1), grid_r)[0]
            else:
                pred = fno_forward(model, f_r, grid_r)[0]
            errors[name].append(metrics.rel_l2(pred, u_r))
    return SuperResReport(resolutions=list(resolutions), errors=errors)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_fno(model: FnoModel, path):
    """JSON header + little-endian float64 blob; spectral weights land as
    interleaved re/im pairs."""
    header = {
        "kind": "fno", "d_v": model.d_v, "modes": model.modes, "n_blocks": model.n_blocks,
        "proj_hidden": model.proj_hidden, "pad_frac": model.pad_frac, "norm": model.norm,
    }
    chunks, off = [], 0
    for name, shape in model.layout():
        size = int(np.prod(shape))
        arr = model.params[off : off + size].reshape(shape)
        off += size
        if name.endswith("_re"):
            re = arr
            continue
        if name.endswith("_im"):
            inter = np.stack([re, arr], axis=-1)  # (..., 2) re/im interleaved
            chunks.append(np.ascontiguousarray(inter, dtype="<f8").tobytes())
        else:
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    blob = b"".join(chunks)
    with open(path, "wb") as fh:
        head = json.dumps(header).encode()
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(blob)


def load_fno(path) -> FnoModel:
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        blob = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    model = FnoModel(d_v=header["d_v"], modes=header["modes"], n_blocks=header["n_blocks"],
                     proj_hidden=header["proj_hidden"], pad_frac=header["pad_frac"], norm=header["norm"])
    params, off = [], 0
    pending_complex = None
    for name, shape in model.layout():
        size = int(np.prod(shape))
        if name.endswith("_re"):
            inter = blob[off : off + 2 * size].reshape(tuple(shape) + (2,))
            off += 2 * size
            params.append(inter[..., 0].ravel())
            pending_complex = inter
        elif name.endswith("_im"):
            params.append(pending_complex[..., 1].ravel())
        else:
            params.append(blob[off : off + size])
            off += size
    model.params = np.concatenate(params)
    return model


def save_deeponet(model: DeepOnet, path):
    network.save_checkpoint(model.branch, str(path) + ".branch")
    network.save_checkpoint(model.trunk, str(path) + ".trunk")


def load_deeponet(path) -> DeepOnet:
    return DeepOnet(branch=network.load_checkpoint(str(path) + ".branch"),
                    trunk=network.load_checkpoint(str(path) + ".trunk"))
