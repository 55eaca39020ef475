"""Command-line front end.

Exit codes: 0 success, 2 invalid input (configs, flags, matrices), 3 a
valid run that failed while executing, 4 a verification command whose
residuals exceeded tolerance. Output directories default under the
``GROWREG_OUT_ROOT`` environment variable (falling back to ``./runs``) and
receive a copy of the config they were produced from.
"""

from __future__ import annotations

import functools
import os
import shutil
import sys

import click
import numpy as np

from . import quadratic
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PRESETS, load_config
from .errors import ConfigError, GrowRegError, InputError
from .harness import build_dataset, compare_schedules, pretrain, run_method
from .netcore import accuracy

EXIT_INPUT = 2
EXIT_RUNTIME = 3
EXIT_TOLERANCE = 4


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except InputError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INPUT)
        except GrowRegError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)

    return wrapper


def _out_dir(out, default_name):
    root = os.environ.get("GROWREG_OUT_ROOT", "runs")
    path = out if out else os.path.join(root, default_name)
    os.makedirs(path, exist_ok=True)
    return path


def _load_experiment(config, seed, preset, k_update=None):
    from dataclasses import replace

    from .scheduler import RegConfig

    exp = load_config(config)
    if seed is not None:
        exp = replace(exp, seed=seed)
    if preset is not None:
        key = "greg2" if exp.method == "greg2" else "greg1"
        exp = replace(exp, reg=RegConfig(**PRESETS[preset][key]))
    if k_update is not None:
        exp = replace(exp, reg=replace(exp.reg, k_update=k_update))
    return exp


@click.group()
def main():
    """Growing-L2 pruning lab: oracles, training runs, schedule comparisons."""


# -- oracle -------------------------------------------------------------------


def _load_matrix(path):
    try:
        mat = np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read matrix file {path}: {exc}") from exc
    if mat.shape[0] != mat.shape[1]:
        raise ConfigError(f"{path}: matrix is {mat.shape}, expected square")
    return mat


@main.command()
@click.option("--dim", default=10, show_default=True, help="Max Hessian dimension.")
@click.option("--cases", default=50, show_default=True, help="Random cases to run.")
@click.option("--seed", default=0, show_default=True)
@click.option("--delta-lambda", "deltas", multiple=True, type=float,
              help="Penalty bumps to test (default: 0.01 and 0.1).")
@click.option("--tol", default=1e-8, show_default=True,
              help="Max allowed closed-form vs descent residual.")
@click.option("--hessian-file", type=click.Path(), default=None,
              help="Plain-text row-major matrix to use instead of random cases.")
@click.option("--wstar-file", type=click.Path(), default=None,
              help="Converged weights for --hessian-file (default: ones).")
@click.option("--exact-vs-approx", is_flag=True,
              help="For 2x2 cases, tabulate approximate vs exact ratios.")
@click.option("--out", type=click.Path(), default=None)
@guarded
def oracle(dim, cases, seed, deltas, tol, hessian_file, wstar_file, exact_vs_approx, out):
    """Check the closed-form equilibrium shift against the descent oracle."""
    deltas = list(deltas) or [0.01, 0.1]
    out_dir = _out_dir(out, "oracle")
    rng = np.random.default_rng(seed)

    models = []
    if hessian_file:
        h = _load_matrix(hessian_file)
        w = (np.loadtxt(wstar_file, ndmin=1) if wstar_file else np.ones(h.shape[0]))
        models.append(quadratic.QuadraticModel(hessian=h, w_star=w))
    else:
        for _ in range(cases):
            d = 2 if exact_vs_approx else int(rng.integers(2, dim + 1))
            models.append(quadratic.random_psd_model(rng, d))

    rows = ["case,dim,delta_lambda,residual_inf"]
    worst = 0.0
    for i, model in enumerate(models):
        for delta in deltas:
            closed = quadratic.perturbed_minimum(model, delta)
            eig_max = float(model.eigenvalues[-1])
            gd = quadratic.gd_minimize_quadratic(
                model, delta, step=1.0 / (eig_max + delta), tol=1e-12
            )
            residual = float(np.max(np.abs(closed - gd)))
            worst = max(worst, residual)
            rows.append(f"{i},{model.dim},{delta!r},{residual!r}")
    report_path = os.path.join(out_dir, "oracle_report.csv")
    with open(report_path, "w") as fh:
        fh.write("\n".join(rows) + "\n")

    if exact_vs_approx:
        lines = ["case,delta_lambda,r1_approx,r2_approx,r1_exact,r2_exact,gap1,gap2"]
        for i, model in enumerate(models):
            if model.dim != 2:
                raise ConfigError("--exact-vs-approx needs 2x2 Hessians")
            w = model.w_star
            if np.any(w == 0):
                model = quadratic.QuadraticModel(model.hessian, np.ones(2))
            for delta in deltas:
                a1, a2 = quadratic.two_d_ratios(model, delta)
                e1, e2 = quadratic.two_d_ratios_exact(model, delta)
                vals = [a1, a2, e1, e2, abs(a1 - e1), abs(a2 - e2)]
                lines.append(
                    f"{i},{delta!r}," + ",".join(repr(float(v)) for v in vals)
                )
        with open(os.path.join(out_dir, "exact_vs_approx.csv"), "w") as fh:
            fh.write("\n".join(lines) + "\n")

    click.echo(f"oracle: {len(models)} case(s), max residual {worst:.3e} "
               f"(tol {tol:g}), report {report_path}")
    if worst >= tol:
        click.echo("error: residual exceeds tolerance", err=True)
        sys.exit(EXIT_TOLERANCE)


# -- training pipelines ---------------------------------------------------------


def _copy_config(config, out_dir):
    shutil.copy(config, os.path.join(out_dir, "config.json"))


@main.command("pretrain")
@click.option("--config", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None)
@click.option("--out", type=click.Path(), default=None)
@guarded
def pretrain_cmd(config, seed, preset, out):
    """Train and checkpoint a baseline network."""
    exp = _load_experiment(config, seed, preset)
    out_dir = _out_dir(out, f"pretrain_seed{exp.seed}")
    _copy_config(config, out_dir)
    data = build_dataset(exp)
    net = pretrain(exp, data)
    val_acc = accuracy(net, data.val_x, data.val_y)
    ckpt = os.path.join(out_dir, "baseline.ckpt")
    save_checkpoint(ckpt, net)
    click.echo(f"pretrain: seed={exp.seed} val_acc={val_acc:.4f} checkpoint={ckpt}")


@main.command("run")
@click.option("--config", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None)
@click.option("--k-update", type=int, default=None,
              help="Override the penalty update interval (sensitivity sweeps).")
@click.option("--baseline", type=click.Path(exists=True), default=None,
              help="Reuse a pretrained checkpoint instead of pretraining.")
@click.option("--out", type=click.Path(), default=None)
@guarded
def run_cmd(config, seed, preset, k_update, baseline, out):
    """Run the configured pruning pipeline and write its record."""
    exp = _load_experiment(config, seed, preset, k_update)
    out_dir = _out_dir(out, f"{exp.method}_seed{exp.seed}")
    _copy_config(config, out_dir)
    base_net = load_checkpoint(baseline)[0] if baseline else None
    record = run_method(exp, baseline=base_net)
    with open(os.path.join(out_dir, "record.csv"), "w") as fh:
        fh.write(record.record_csv())
    with open(os.path.join(out_dir, "summary.csv"), "w") as fh:
        fh.write(record.summary_csv())
    if record.snapshots:
        with open(os.path.join(out_dir, "norm_snapshots.csv"), "w") as fh:
            fh.write(record.snapshots_csv())
    s = record.summary
    click.echo(
        f"run: method={s['method']} seed={s['seed']} sparsity={s['sparsity']:.4f} "
        f"baseline={s['baseline_acc']:.4f} pre_prune={s['pre_prune_acc']:.4f} "
        f"post_prune={s['post_prune_acc']:.4f} final={s['post_finetune_acc']:.4f}"
    )


@main.command("compare")
@click.option("--config", required=True, type=click.Path(exists=True))
@click.option("--seeds", default=3, show_default=True, help="Number of seeds.")
@click.option("--kind", type=click.Choice(["l1", "random"]), default="l1",
              show_default=True, help="Shared-set selection rule.")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None)
@click.option("--k-update", type=int, default=None,
              help="Override the penalty update interval (sensitivity sweeps).")
@click.option("--out", type=click.Path(), default=None)
@guarded
def compare_cmd(config, seeds, kind, preset, k_update, out):
    """Ramped-vs-one-shot comparison over seeds with matched pruned sets."""
    exp = _load_experiment(config, None, preset, k_update)
    out_dir = _out_dir(out, f"compare_{kind}" + (f"_ku{k_update}" if k_update else ""))
    _copy_config(config, out_dir)
    result = compare_schedules(exp, n_seeds=seeds, kind=kind)
    with open(os.path.join(out_dir, "comparison.csv"), "w") as fh:
        fh.write(result.table_csv())
    for method, (mean, std) in result.aggregates.items():
        click.echo(f"compare[{kind}]: {method} final acc {mean:.4f} +/- {std:.4f}")


# -- report -------------------------------------------------------------------


@main.command("report")
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None,
              help="Destination directory (default: the run directory).")
@guarded
def report_cmd(run_dir, out):
    """Reshape a run's record into tidy long-format plot data."""
    record_path = os.path.join(run_dir, "record.csv")
    if not os.path.exists(record_path):
        raise ConfigError(f"{run_dir}: no record.csv found")
    out_dir = out or run_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(record_path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ConfigError(f"{record_path}: empty file, expected a header row")
    header = lines[0].split(",")
    body = [ln.split(",") for ln in lines[1:]]
    series_path = os.path.join(out_dir, "report_series.csv")
    out_lines = ["iter,layer,metric,value"]
    for row in body:
        vals = dict(zip(header, row))
        it = vals["iter"]
        for metric in ("lambda", "train_loss", "val_acc"):
            out_lines.append(f"{it},,{metric},{vals[metric]}")
        for col in header:
            if col.startswith("disp_l"):
                out_lines.append(f"{it},{col[6:]},dispersion,{vals[col]}")
    with open(series_path, "w") as fh:
        fh.write("\n".join(out_lines) + "\n")
    if not body:
        click.echo("warning: record has no checkpoint rows; empty report written",
                   err=True)

    snap_path = os.path.join(run_dir, "norm_snapshots.csv")
    if os.path.exists(snap_path):
        with open(snap_path) as fh:
            snap_lines = [ln.strip() for ln in fh if ln.strip()]
        rows = [ln.split(",") for ln in snap_lines[1:]]
        iters = sorted({int(r[0]) for r in rows})
        picks = {iters[0], iters[len(iters) // 2], iters[-1]} if iters else set()
        out_snap = [snap_lines[0]] + [",".join(r) for r in rows if int(r[0]) in picks]
        with open(os.path.join(out_dir, "report_snapshots.csv"), "w") as fh:
            fh.write("\n".join(out_snap) + "\n")
    click.echo(f"report: wrote {series_path}")


if __name__ == "__main__":
    main()
