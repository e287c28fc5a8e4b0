#!/usr/bin/env python3

import functools
import json
import os
import sys
from typing import Dict, Optional, Tuple

import click
import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from . import __version__
from .config import load_settings, setup_logging
from .copula_correction import CorrectionConfig
from .exceptions import CopulaInlaError, ModelSpecError
from .experiments import (VARIANT_LABELS, build_report, compare_summaries, config_hash, load_plan,
                          poisson_sweep, run_experiment, toenail_sweep, write_manifest)
from .hyperposterior import ExplorationConfig, fit
from .mcmc import ChainConfig, run_mcmc, summarize
from .model_core import ModelSpec, simulate_dataset
from .model_io import attach_observations, load_model, load_toenail, save_model, save_observations
from .templates import ModelTemplates

console = Console()


def report_error(kind: str, message: str):
    click.echo(json.dumps({"error": kind, "message": message}), err=True)


def handle_errors(command):
    """Report package, file and value errors as one JSON line on stderr, exit code 1"""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (CopulaInlaError, OSError, ValueError) as e:
            report_error(type(e).__name__, str(e))
            click.get_current_context().exit(1)
    return wrapper


class JsonErrorGroup(click.Group):
    """Click group whose usage and parameter errors also end as one JSON line on stderr"""

    def main(self, *args, standalone_mode: bool = True, **kwargs):
        if not standalone_mode:
            return super().main(*args, standalone_mode=False, **kwargs)
        try:
            rv = super().main(*args, standalone_mode=False, **kwargs)
        except click.ClickException as e:
            report_error(type(e).__name__, e.format_message())
            sys.exit(e.exit_code)
        except click.Abort:
            report_error("Abort", "aborted")
            sys.exit(1)
        sys.exit(rv if isinstance(rv, int) else 0)


seed_option = click.option("--seed", type=int, default=1, show_default=True, help="Random seed")
threads_option = click.option("--threads", type=int, default=None,
                              help="Worker count (default from settings)")
correction_option = click.option("--correction", type=click.Choice(["none", "mean", "skew"]), default=None,
                                 help="Copula correction variant (default from settings)")
xi_option = click.option("--xi", type=float, default=None, help="Soft threshold scale")
out_option = click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
                          help="Output directory (default from settings)")


def model_options(command):
    """--model, --template, --param, --data and --toenail for commands that load one model"""
    options = [
        click.option("--model", "-m", type=click.Path(dir_okay=False), help="Model JSON"),
        click.option("--template", "-t", default=None, help="Model template name instead of --model"),
        click.option("--param", "-p", "params", multiple=True, help="Template parameter key=value"),
        click.option("--data", "-d", type=click.Path(dir_okay=False), help="Observation CSV"),
        click.option("--toenail", type=click.Path(dir_okay=False),
                     help="Toenail CSV (id,visit,time,treatment,outcome)"),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _parse_params(pairs: Tuple[str, ...]) -> Dict:
    params = {}
    for pair in pairs:
        if "=" not in pair:
            raise ModelSpecError(f"--param expects key=value, got '{pair}'")
        key, raw = pair.split("=", 1)
        try:
            params[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            params[key.strip()] = raw
    return params


def _output_dir(ctx, out_dir: Optional[str]) -> str:
    path = out_dir or ctx.obj["settings"]["experiments"]["output_dir"]
    os.makedirs(path, exist_ok=True)
    return path


def _threads(ctx, threads: Optional[int]) -> int:
    return int(threads if threads is not None else ctx.obj["settings"]["runtime"]["threads"])


def _load_spec(model: Optional[str], template: Optional[str], params: Dict,
               data: Optional[str], toenail: Optional[str]) -> ModelSpec:
    if toenail:
        return load_toenail(toenail)
    if model:
        spec = load_model(model)
    elif template:
        spec = ModelTemplates().build(template, params).fit_spec
    else:
        raise click.UsageError("give --model, --template or --toenail")
    return attach_observations(spec, data) if data else spec


def _print_frame(frame: pd.DataFrame, title: str):
    table = Table(title=title)
    for column in frame.columns:
        table.add_column(str(column), justify="right" if frame[column].dtype.kind in "fi" else "left")
    for _, row in frame.iterrows():
        table.add_row(*[f"{v:.4f}" if isinstance(v, float) else str(v) for v in row])
    console.print(table)


@click.group(cls=JsonErrorGroup)
@click.version_option(__version__, prog_name="copula-inla")
@click.option("--config", "config_path", type=click.Path(), default=None, help="Settings YAML file")
@click.option("--log-level", default=None, help="Root log level, e.g. DEBUG")
@click.pass_context
def cli(ctx, config_path, log_level):
    """Copula-corrected Laplace approximations for latent Gaussian models"""
    ctx.ensure_object(dict)
    settings = load_settings(config_path)
    setup_logging(settings, log_level)
    ctx.obj["settings"] = settings


@cli.command()
@click.option("--template", "-t", required=True, help="Model template name")
@click.option("--param", "-p", "params", multiple=True, help="Template parameter key=value (JSON value)")
@seed_option
@out_option
@click.pass_context
@handle_errors
def simulate(ctx, template, params, seed, out_dir):
    """Simulate one dataset from a template; writes model.json, observations.csv, truth.json"""
    out = _output_dir(ctx, out_dir)
    instance = ModelTemplates().build(template, _parse_params(params))
    y = simulate_dataset(instance.simulate_spec, instance.truth, seed)
    save_model(instance.fit_spec, os.path.join(out, "model.json"))
    save_observations(os.path.join(out, "observations.csv"), y, instance.fit_spec.trials)
    truth = {"fixed": np.asarray(instance.truth.fixed).tolist(),
             "hyper": np.asarray(instance.truth.hyper).tolist(),
             "hyper_names": list(instance.simulate_spec.hyper_names), "seed": seed}
    with open(os.path.join(out, "truth.json"), "w") as f:
        json.dump(truth, f, indent=2)
    click.echo(f"Simulated {len(y)} observations from '{template}' into {out}")


@cli.command(name="fit")
@model_options
@threads_option
@correction_option
@xi_option
@out_option
@click.pass_context
@handle_errors
def fit_command(ctx, model, template, params, data, toenail, threads, correction, xi, out_dir):
    """Fit one correction variant; writes grid_<variant>.csv, summary_<variant>.csv and marginals"""
    settings = ctx.obj["settings"]
    out = _output_dir(ctx, out_dir)
    spec = _load_spec(model, template, _parse_params(params), data, toenail)
    cfg = CorrectionConfig.from_settings(settings, mode=correction or "default", xi=xi)
    result = fit(spec, cfg, ExplorationConfig.from_settings(settings, _threads(ctx, threads)))
    label = cfg.label
    result.posterior.to_frame().to_csv(os.path.join(out, f"grid_{label}.csv"), index=False,
                                       float_format="%.17g")
    summary = result.summary_frame()
    summary.to_csv(os.path.join(out, f"summary_{label}.csv"), index=False, float_format="%.17g")
    for name, marginal in {**result.hyper, **result.latent}.items():
        marginal.to_csv(os.path.join(out, f"marginal_{label}_{name}.csv"))
    _print_frame(summary, f"{spec.name}: {VARIANT_LABELS[cfg.mode]} ({len(result.posterior.points)} grid points)")


@cli.command()
@model_options
@click.option("--iterations", type=int, default=None, help="Total iterations per chain")
@click.option("--burn-in", type=int, default=None, help="Burn-in iterations")
@click.option("--thin", type=int, default=None, help="Keep every k-th draw")
@click.option("--chains", type=int, default=None, help="Number of chains")
@click.option("--checkpoint-dir", type=click.Path(file_okay=False), default=None,
              help="Resume from and save chain checkpoints here")
@seed_option
@threads_option
@out_option
@click.pass_context
@handle_errors
def mcmc(ctx, model, template, params, data, toenail, iterations, burn_in, thin, chains,
         checkpoint_dir, seed, threads, out_dir):
    """Run the reference sampler; writes samples.csv, mcmc_summary.csv, histograms.csv"""
    out = _output_dir(ctx, out_dir)
    spec = _load_spec(model, template, _parse_params(params), data, toenail)
    cfg = ChainConfig.from_settings(ctx.obj["settings"], n_iter=iterations, burn_in=burn_in,
                                    thin=thin, n_chains=chains, seed=seed)
    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)
    samples = run_mcmc(spec, None, cfg, threads=_threads(ctx, threads), checkpoint_dir=checkpoint_dir)
    samples.to_csv(os.path.join(out, "samples.csv"))
    names = list(spec.hyper_names) + [spec.latent_names[i] for i in spec.fixed_index_set]
    summary = summarize(samples, out, names=names)
    _print_frame(summary, f"{spec.name}: {cfg.n_chains} chain(s), {cfg.n_keep} kept draws each")


@cli.command()
@click.option("--inla", "inla_path", type=click.Path(dir_okay=False), required=True,
              help="summary_<variant>.csv from fit")
@click.option("--reference", type=click.Path(dir_okay=False), required=True,
              help="mcmc_summary.csv (or another summary) to compare against")
@click.option("--samples", "samples_path", type=click.Path(dir_okay=False),
              default=None, help="samples.csv for coverage")
@out_option
@click.pass_context
@handle_errors
def compare(ctx, inla_path, reference, samples_path, out_dir):
    """Scaled mean gaps, variance ratios and coverage of one fit against a reference"""
    out = _output_dir(ctx, out_dir)
    inla = pd.read_csv(inla_path)
    samples = pd.read_csv(samples_path) if samples_path else None
    table = compare_summaries(inla, pd.read_csv(reference), samples)
    table.to_csv(os.path.join(out, "comparison.csv"), index=False, float_format="%.17g")
    _print_frame(table, "Comparison")


@cli.command(name="table")
@click.option("--dir", "replicate_dir", type=click.Path(file_okay=False), required=True,
              help="Directory with replicate_XXXX.csv files")
@out_option
@click.pass_context
@handle_errors
def table_command(ctx, replicate_dir, out_dir):
    """Merge stored replicate outputs into report.csv"""
    report = build_report(replicate_dir)
    if out_dir and os.path.abspath(out_dir) != os.path.abspath(replicate_dir):
        os.makedirs(out_dir, exist_ok=True)
        report.to_csv(os.path.join(out_dir, "report.csv"))
    _print_frame(report.table, f"Comparison over {report.replicates} replicate(s)")


@cli.command()
@click.option("--plan", "plan_path", type=click.Path(dir_okay=False), required=True,
              help="Experiment plan JSON")
@threads_option
@out_option
@click.pass_context
@handle_errors
def run(ctx, plan_path, threads, out_dir):
    """Run a simulation study from a plan file"""
    settings = ctx.obj["settings"]
    plan = load_plan(plan_path, settings)
    out = _output_dir(ctx, out_dir)
    report = run_experiment(plan, out, settings, threads=_threads(ctx, threads))
    _print_frame(report.table, f"{plan.name}: {report.replicates} replicate(s), "
                               f"{report.excluded} excluded")


@cli.command()
@click.option("--kind", type=click.Choice(["toenail", "poisson"]), required=True)
@click.option("--values", required=True, help="Comma-separated sigma (toenail) or beta (poisson) values")
@click.option("--param", "-p", "params", multiple=True, help="Base template parameter key=value")
@click.option("--variants", default="none,mean,skew", show_default=True, help="Comma-separated variants")
@seed_option
@threads_option
@xi_option
@out_option
@click.pass_context
@handle_errors
def sweep(ctx, kind, values, params, variants, seed, threads, xi, out_dir):
    """Toenail sigma sweep or Poisson intercept sweep; writes sweep.csv and marginal CSVs"""
    settings = ctx.obj["settings"]
    out = _output_dir(ctx, out_dir)
    grid = [float(v) for v in values.split(",") if v.strip()]
    modes = [None if v.strip() == "none" else v.strip() for v in variants.split(",")]
    xi_value = float(xi if xi is not None else settings["correction"]["xi"])
    chain = ChainConfig.from_settings(settings, seed=seed)
    exploration = ExplorationConfig.from_settings(settings, _threads(ctx, threads))
    runner = toenail_sweep if kind == "toenail" else poisson_sweep
    frame = runner(grid, _parse_params(params), seed=seed, variants=modes, xi=xi_value,
                   chain=chain, exploration=exploration, out_dir=out)
    frame.to_csv(os.path.join(out, "sweep.csv"), index=False, float_format="%.17g")
    config = {"kind": kind, "values": grid, "variants": variants, "seed": seed,
              "params": _parse_params(params), "xi": xi_value}
    write_manifest(out, config, config_hash(config), [seed])
    _print_frame(frame, f"{kind} sweep")


if __name__ == "__main__":
    cli()
