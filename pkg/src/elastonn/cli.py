"""Command-line entry points: dataset generation, training, evaluation,
integration benchmark, transfer sweep, super-resolution study, reporting."""

from __future__ import annotations

import json
import os

import click
import numpy as np

from . import femref, harness, mechanics, quadrature


@click.group()
@click.option("--seed", default=0, show_default=True, help="Base RNG seed.")
@click.option("--out", default="runs", show_default=True, help="Output directory.")
@click.option("--threads", default=1, show_default=True, help="BLAS/JIT thread cap.")
@click.pass_context
def main(ctx, seed, out, threads):
    os.environ.setdefault("OMP_NUM_THREADS", str(threads))
    os.environ.setdefault("NUMBA_NUM_THREADS", str(threads))
    ctx.obj = {"seed": seed, "out": out}


@main.command("gen-data")
@click.option("--mode", type=click.Choice(["force-field", "neumann-pi2", "periodic"]),
              default="force-field", show_default=True)
@click.option("--n", default=1000, show_default=True, help="Number of load cases.")
@click.option("--p", default=8, show_default=True, help="Evaluation points per case.")
@click.option("--sensors", default=20, show_default=True)
@click.option("--grid", default=1024, show_default=True)
@click.option("--corr-length", default=0.1, show_default=True)
@click.option("--out", "out_path", default=None, help="Dataset directory.")
@click.pass_obj
def gen_data(obj, mode, n, p, sensors, grid, corr_length, out_path):
    """Generate an operator-learning dataset (FEM-solved load fields)."""
    ds = femref.build_dataset(n, p, n_sensors=sensors, seed=obj["seed"], mode=mode,
                              grid_n=grid, corr_length=corr_length)
    path = out_path or os.path.join(obj["out"], f"dataset-{mode}-{obj['seed']}")
    femref.save_dataset(ds, path)
    click.echo(f"wrote {path} ({ds.n_cases} cases, {ds.n_entries} entries)")


@main.command()
@click.argument("config", type=click.Path(exists=True))
@click.option("--method", default=None, help="Override the config's method.")
@click.option("--epochs", type=int, default=None)
@click.option("--seeds", default=None, help="Comma-separated seed list override.")
@click.pass_obj
def train(obj, config, method, epochs, seeds):
    """Run the experiment described by a YAML config file."""
    overrides = {"method": method, "epochs": epochs, "out_dir": obj["out"]}
    if seeds:
        overrides["seeds"] = [int(s) for s in seeds.split(",")]
    cfg = harness.load_config(config, **overrides)
    report = harness.run_experiment(cfg)
    click.echo(json.dumps(report.aggregates, indent=1, default=float))


@main.command("eval")
@click.argument("report_json", type=click.Path(exists=True))
def eval_cmd(report_json):
    """Print the aggregate metrics of a stored report."""
    with open(report_json) as fh:
        report = json.load(fh)
    click.echo(json.dumps(report.get("aggregates", {}), indent=1))


@main.command()
@click.option("--n", "n_values", default="100,1000", show_default=True)
@click.option("--n-seeds", default=20, show_default=True)
@click.pass_obj
def bench(obj, n_values, n_seeds):
    """Integration-rule benchmark on the nonlinear bar's energy integrand."""
    def integrand(x):
        u, du = mechanics.analytic_a(x)
        return mechanics.energy_1d(mechanics.Material1D("nonlinear-A"), 1.0 + du) - x * u

    ns = tuple(int(v) for v in n_values.split(","))
    rows = quadrature.integration_benchmark(integrand, n_values=ns, seeds=range(n_seeds))
    os.makedirs(obj["out"], exist_ok=True)
    path = os.path.join(obj["out"], "integration_benchmark.csv")
    quadrature.benchmark_to_csv(rows, path)
    click.echo(f"wrote {path} ({len(rows)} rows)")


@main.command()
@click.option("--steps", default=21, show_default=True, help="pi2 grid size.")
@click.option("--n-points", default=1000, show_default=True)
@click.option("--epochs", default=15, show_default=True)
@click.pass_obj
def sweep(obj, steps, n_points, epochs):
    """Transfer-learning sweep over the Neumann parameter (warm vs cold)."""
    pi2 = np.linspace(0.0, 1.0, steps)
    warm = neural_sweep(pi2, True, n_points, obj["seed"], epochs)
    cold = neural_sweep(pi2, False, n_points, obj["seed"], epochs)
    click.echo(f"warm {warm['total_seconds']:.1f}s vs cold {cold['total_seconds']:.1f}s; "
               f"mean rel L2 {warm['rel_l2_u'].mean():.2e}")


def neural_sweep(pi2, warm, n_points, seed, epochs):
    from . import neuralfem

    return neuralfem.transfer_sweep(pi2, warm_start=warm, n_colloc=n_points, seed=seed, epochs=epochs)


@main.command()
@click.option("--epochs", default=120, show_default=True, help="DeepONet epochs.")
@click.option("--fno-epochs", default=200, show_default=True)
@click.option("--d-v", default=64, show_default=True)
@click.pass_obj
def superres(obj, epochs, fno_epochs, d_v):
    """Train the operators and evaluate them across grid resolutions."""
    cfg = harness.ExperimentConfig(experiment="superres", method="all", seeds=[obj["seed"]],
                                   epochs=epochs, d_v=d_v, out_dir=obj["out"],
                                   extra={"fno_epochs": fno_epochs})
    report = harness.run_experiment(cfg)
    click.echo(json.dumps(report.extras["errors"], indent=1, default=float))


@main.command()
@click.argument("report_json", type=click.Path(exists=True))
@click.option("--kind", type=click.Choice(["boxplot", "history", "field", "resolution", "histogram"]),
              default="boxplot", show_default=True)
@click.pass_obj
def report(obj, report_json, kind):
    """Re-emit plot CSV series from a stored report."""
    with open(report_json) as fh:
        data = json.load(fh)
    rep = harness.ExperimentReport(config=data["config"], config_hash=data["config_hash"],
                                   per_seed=data["per_seed"], aggregates=data["aggregates"],
                                   extras=data.get("extras", {}))
    path = harness.emit_plot_data(rep, kind, obj["out"])
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
