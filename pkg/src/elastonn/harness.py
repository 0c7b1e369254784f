"""Experiment configuration, dispatch, and reporting.

An experiment is one YAML file (or an ExperimentConfig); ``run_experiment``
fans the listed seeds out over the chosen method, collects per-seed error
measures, and writes ``report.json`` plus CSV series for plotting.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import femref, mechanics, metrics, neuralfem, operators, quadrature

EXPERIMENT_IDS = (
    "a", "b1", "b2-field", "b2-neumann", "c1", "c2",
    "integration", "superres", "transfer", "fem-warmstart",
)

REPORT_VERSION = 1


@dataclass
class ExperimentConfig:
    experiment: str
    method: str = ""
    seeds: list = field(default_factory=lambda: list(range(10)))
    out_dir: str = "runs"
    # method knobs (subset used per experiment)
    widths: list | None = None
    activation: str = "tanh"
    optimizer: str = "lbfgs"
    epochs: int = 15
    n_points: int = 100
    integration: str = "trapezoid"
    sampler: str = "lhs"
    lambda_b: float = 1.0
    discriminator_width: int = 50
    d_v: int = 64
    batch: int = 5
    dataset: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_IDS:
            raise ValueError(f"unknown experiment id {self.experiment!r}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")

    def hash(self):
        """Hash of the semantically meaningful fields (output path excluded)."""
        payload = asdict(self)
        payload.pop("out_dir")
        blob = json.dumps(payload, sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**data)


@dataclass
class ExperimentReport:
    config: dict
    config_hash: str
    per_seed: list  # dicts: {seed, metrics..., seconds}
    aggregates: dict
    extras: dict = field(default_factory=dict)
    version: int = REPORT_VERSION

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(asdict(self), fh, indent=1, default=_jsonable)
        return os.path.join(out_dir, "report.json")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return float(x)
    raise TypeError(f"cannot serialize {type(x)}")


def _aggregate(per_seed, keys=("rel_l2_u", "rel_l2_du", "seconds")):
    out = {}
    for key in keys:
        vals = [row[key] for row in per_seed if key in row and np.isfinite(row[key])]
        if vals:
            out[key] = metrics.stats(vals)
    return out


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Dispatch an experiment over its seeds and write the report."""
    runner = _RUNNERS.get((cfg.experiment, cfg.method)) or _RUNNERS.get(cfg.experiment)
    if runner is None:
        raise ValueError(f"no runner for experiment {cfg.experiment!r} method {cfg.method!r}")
    per_seed, extras = runner(cfg)
    report = ExperimentReport(
        config=asdict(cfg), config_hash=cfg.hash(), per_seed=per_seed,
        aggregates=_aggregate(per_seed), extras=extras,
    )
    out = os.path.join(cfg.out_dir, f"{cfg.experiment}-{cfg.method or 'default'}-{cfg.hash()}")
    report.save(out)
    _emit_default_plots(report, out)
    return report


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------


def _bar_cfg(cfg, seed):
    return neuralfem.NeuralFemConfig(
        widths=cfg.widths or [1, 10, 1], activation=cfg.activation, epochs=cfg.epochs,
        optimizer=cfg.optimizer, lr=1.0 if cfg.optimizer == "lbfgs" else 0.01,
        n_interior=cfg.n_points, sampler=cfg.sampler, integration=cfg.integration,
        lambda_b=cfg.lambda_b, seed=seed,
    )


def _run_a_pinn(cfg):
    rows = []
    for seed in cfg.seeds:
        res = neuralfem.train_pinn(mechanics.example_a(), _bar_cfg(cfg, seed))
        rows.append({"seed": seed, "seconds": res.seconds, "loss_history": res.history.losses,
                     **res.metrics})
    return rows, {}


def _run_bar_dem(problem_factory):
    def run(cfg):
        rows = []
        for seed in cfg.seeds:
            res = neuralfem.train_dem(problem_factory(), _bar_cfg(cfg, seed))
            rows.append({"seed": seed, "seconds": res.seconds, "loss_history": res.history.losses,
                         **res.metrics})
        return rows, {}

    return run


def _run_a_cpinn(cfg):
    rows = []
    for seed in cfg.seeds:
        res = neuralfem.train_cpinn(h=cfg.discriminator_width, n_colloc=cfg.n_points,
                                    seed=seed, epochs=cfg.epochs)
        rows.append({"seed": seed, "seconds": res.seconds, **res.metrics})
    return rows, {}


def _run_c(problem_factory):
    def run(cfg):
        rows, extras = [], {}
        for seed in cfg.seeds:
            fem_cfg = neuralfem.NeuralFemConfig(
                widths=cfg.widths or [2, 30, 30, 2], activation=cfg.activation,
                epochs=cfg.epochs, n_interior=cfg.n_points, integration=cfg.integration,
                sampler=cfg.sampler, lambda_b=cfg.lambda_b, seed=seed, tol_change=1e-13)
            if cfg.method == "dcm":
                res = neuralfem.train_dcm_2d(problem_factory(), fem_cfg)
            else:
                res = neuralfem.train_dem_2d(problem_factory(), fem_cfg)
            row = {"seed": seed, "seconds": res.seconds, **res.metrics}
            fields = neuralfem.evaluate_plate_model(res.mlp, problem_factory())
            extras[f"fields_seed{seed}"] = {"u": fields["u"], "SE": fields["SE"]}
            rows.append(row)
        return rows, extras

    return run


def _run_integration(cfg):
    u_ref, du_ref = None, None

    def integrand(x):
        u, du = mechanics.analytic_a(x)
        mat = mechanics.Material1D("nonlinear-A")
        return mechanics.energy_1d(mat, 1.0 + du) - x * u

    rows_raw = quadrature.integration_benchmark(integrand, n_values=(100, 1000), seeds=cfg.seeds)
    rows = [{"rule": r, "sampler": s, "n": n, "seed": sd, "abs_error": e}
            for r, s, n, sd, e in rows_raw]
    return rows, {"benchmark_rows": rows_raw}


def _run_transfer(cfg):
    pi2 = np.linspace(0.0, 1.0, cfg.extra.get("n_steps", 21))
    rows = []
    for seed in cfg.seeds:
        warm = neuralfem.transfer_sweep(pi2, warm_start=True, n_colloc=cfg.n_points,
                                        seed=seed, epochs=cfg.epochs)
        cold = neuralfem.transfer_sweep(pi2, warm_start=False, n_colloc=cfg.n_points,
                                        seed=seed, epochs=cfg.epochs)
        rows.append({
            "seed": seed,
            "rel_l2_u": float(warm["rel_l2_u"].mean()),
            "seconds": warm["total_seconds"],
            "cold_seconds": cold["total_seconds"],
            "speedup": cold["total_seconds"] / warm["total_seconds"],
        })
    return rows, {"pi2": pi2}


def _run_fem_warmstart(cfg):
    rows = []
    for seed in cfg.seeds:
        dem = neuralfem.train_dem(mechanics.example_a(), _bar_cfg(cfg, seed))
        cold = femref.fem1d_newton_a()
        warm = femref.fem1d_newton_a(init=lambda x: np.interp(
            x, np.linspace(-1, 1, 1000), neuralfem.evaluate_bar_model(dem.mlp, np.linspace(-1, 1, 1000))[0]))
        rows.append({"seed": seed, "seconds": dem.seconds, "rel_l2_u": dem.metrics["rel_l2_u"],
                     "cold_iters": cold.newton_iters, "warm_iters": warm.newton_iters})
    return rows, {}


def _dataset_from_cfg(cfg, seed, default_mode="force-field"):
    opts = dict(n_cases=1000, n_per_case=8, seed=seed, mode=default_mode)
    opts.update(cfg.dataset)
    return femref.build_dataset(**opts)


def _run_operator(cfg):
    rows, extras = [], {}
    train_seed = cfg.extra.get("data_seed", 1000)
    ds_tr = _dataset_from_cfg(cfg, train_seed)
    test_opts = dict(cfg.dataset)
    test_opts["n_cases"] = cfg.extra.get("n_test", 100)
    ds_te = femref.build_dataset(seed=train_seed + 1, mode=ds_tr.mode,
                                 n_per_case=ds_tr.eval_x.shape[1],
                                 **{k: v for k, v in test_opts.items() if k not in ("seed", "mode", "n_per_case")})
    for seed in cfg.seeds:
        if cfg.method == "deeponet":
            res = operators.train_deeponet(ds_tr, ds_te, epochs=cfg.epochs, seed=seed)
        elif cfg.method == "pideeponet":
            res = operators.train_pideeponet(ds_tr, ds_te, epochs=cfg.epochs, seed=seed)
        elif cfg.method == "fno":
            res = operators.train_fno(ds_tr, ds_te, d_v=cfg.d_v, physics=False,
                                      epochs=cfg.epochs, batch=cfg.batch, seed=seed)
        elif cfg.method == "pino":
            res = operators.train_fno(ds_tr, ds_te, d_v=cfg.d_v, physics=True,
                                      epochs=cfg.epochs, batch=cfg.batch, seed=seed)
        else:
            raise ValueError(f"unknown operator method {cfg.method!r}")
        rows.append({"seed": seed, "seconds": res.seconds,
                     "rel_l2_u": res.metrics["rel_l2_u_mean"], "rel_l2_du": res.metrics["rel_l2_du_mean"],
                     "rel_l2_u_median": res.metrics["rel_l2_u_median"],
                     "rel_l2_du_median": res.metrics["rel_l2_du_median"]})
    return rows, extras


def _run_neumann(cfg):
    rows = []
    ds = femref.build_dataset(n_cases=100, n_per_case=1, seed=cfg.extra.get("data_seed", 2000),
                              mode="neumann-pi2")
    for seed in cfg.seeds:
        res = operators.train_neumann_pideeponet(ds, epochs=cfg.epochs, seed=seed)
        rows.append({"seed": seed, "seconds": res.seconds,
                     "rel_l2_u": res.metrics["rel_l2_u_mean"], "rel_l2_du": res.metrics["rel_l2_du_mean"],
                     "train_seconds": res.metrics["train_seconds"],
                     "infer_seconds": res.metrics["infer_seconds"]})
    return rows, {}


def _run_superres(cfg):
    seed = cfg.seeds[0]
    ds_tr = _dataset_from_cfg(cfg, cfg.extra.get("data_seed", 1000))
    ds_te = femref.build_dataset(n_cases=cfg.extra.get("n_test", 100), n_per_case=8,
                                 seed=cfg.extra.get("data_seed", 1000) + 1)
    don = operators.train_deeponet(ds_tr, ds_te, epochs=cfg.epochs, seed=seed)
    fno = operators.train_fno(ds_tr, ds_te, d_v=cfg.d_v, epochs=cfg.extra.get("fno_epochs", 200),
                              batch=cfg.batch, seed=seed)
    pino = operators.train_fno(ds_tr, ds_te, d_v=cfg.d_v, physics=True,
                               epochs=cfg.extra.get("fno_epochs", 200), batch=cfg.batch, seed=seed)
    report = operators.superres_eval(
        {"deeponet": don.model, "fno": fno.model, "pino": pino.model},
        sensor_x=ds_tr.grid[ds_tr.sensor_idx])
    rows = [{"seed": seed, "resolution": r, **{k: v[i] for k, v in report.errors.items()}}
            for i, r in enumerate(report.resolutions)]
    return rows, {"resolutions": report.resolutions, "errors": report.errors}


_RUNNERS = {
    ("a", "pinn"): _run_a_pinn,
    ("a", "dem"): _run_bar_dem(mechanics.example_a),
    ("a", "cpinn"): _run_a_cpinn,
    ("b1", "dem"): _run_bar_dem(mechanics.example_b1),
    ("b2-field", "deeponet"): _run_operator,
    ("b2-field", "pideeponet"): _run_operator,
    ("b2-field", "fno"): _run_operator,
    ("b2-field", "pino"): _run_operator,
    ("b2-neumann", "pideeponet"): _run_neumann,
    ("c1", "dem"): _run_c(mechanics.example_c1),
    ("c1", "dcm"): _run_c(mechanics.example_c1),
    ("c2", "dem"): _run_c(mechanics.example_c2),
    "integration": _run_integration,
    "transfer": _run_transfer,
    "fem-warmstart": _run_fem_warmstart,
    "superres": _run_superres,
}


# ---------------------------------------------------------------------------
# plot-data emission
# ---------------------------------------------------------------------------


def emit_plot_data(report: ExperimentReport, kind, out_dir):
    """Write one CSV series for plotting; returns the path."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{kind}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if kind == "boxplot":
            w.writerow(["method", "n_colloc", "seed", "eps_u", "eps_du", "seconds"])
            method = report.config.get("method", "")
            n = report.config.get("n_points", "")
            for row in report.per_seed:
                w.writerow([method, n, row.get("seed"), row.get("rel_l2_u"),
                            row.get("rel_l2_du"), row.get("seconds")])
        elif kind == "history":
            w.writerow(["seed", "epoch", "loss"])
            for row in report.per_seed:
                for i, loss in enumerate(row.get("loss_history", [])):
                    w.writerow([row.get("seed"), i, repr(loss)])
        elif kind == "field":
            w.writerow(["X", "u_model", "u_ref", "abs_err"])
            for X, um, ur in report.extras.get("field_curve", []):
                w.writerow([X, um, ur, abs(um - ur)])
        elif kind == "resolution":
            w.writerow(["model", "resolution", "eps_u"])
            for name, errs in report.extras.get("errors", {}).items():
                for r, e in zip(report.extras.get("resolutions", []), errs):
                    w.writerow([name, r, repr(e)])
        elif kind == "histogram":
            w.writerow(["layer", "component", "bin_left", "bin_right", "count"])
            for comp, layers in report.extras.get("grad_histograms", {}).items():
                for layer, (counts, edges) in layers.items():
                    for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                        w.writerow([layer, comp, repr(lo), repr(hi), int(c)])
        else:
            raise ValueError(f"unknown plot kind {kind!r}")
    return path


def _emit_default_plots(report, out_dir):
    emit_plot_data(report, "boxplot", out_dir)
    if any("loss_history" in row for row in report.per_seed):
        emit_plot_data(report, "history", out_dir)
    if "resolutions" in report.extras:
        emit_plot_data(report, "resolution", out_dir)


def wall_time(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
