"""Command-line front end: one subcommand per experiment kind.

Exit codes: 0 success, 2 configuration/validation error, 1 runtime
numerical failure.  All randomness flows from the required ``--seed``
(there is no timestamp default).  ``--config`` loads a full experiment
config file whose values override the flags.
"""

from __future__ import annotations

import sys

import click

from .errors import ConfigurationError, DomainError, DriftsimError
from .experiments import load_config_file, run_experiment

_SEED = click.option("--seed", type=int, default=None,
                     help="Master seed (required; no timestamp default).")
_OUT = click.option("--out", type=click.Path(dir_okay=False), default=None,
                    help="CSV output path (default: stdout).")
_WORKERS = click.option("--workers", type=int, default=None,
                        help="Worker count; output is identical for all values.")
_CONFIG = click.option("--config", "config_path",
                       type=click.Path(exists=True, dir_okay=False),
                       default=None,
                       help="TOML experiment config overriding the flags.")


def _assemble(kind: str, seed, workers, config_path, out, params: dict) -> dict:
    raw = {"kind": kind}
    if seed is not None:
        raw["seed"] = seed
    if workers is not None:
        raw["workers"] = workers
    if out is not None:
        raw["out"] = out
    table = {k: v for k, v in params.items() if v is not None}
    if table:
        raw[kind] = table
    if config_path is not None:
        overlay = load_config_file(config_path)
        sub = overlay.pop(kind, None)
        raw.update(overlay)
        if sub:
            raw.setdefault(kind, {}).update(sub)
    return raw


def _execute(raw: dict):
    try:
        return run_experiment(raw)
    except (ConfigurationError, DomainError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except DriftsimError as exc:
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(1)


def _emit(result, out):
    if out:
        with open(out, "w", newline="") as fh:
            result.to_csv(fh)
    else:
        click.echo(result.csv_bytes().decode(), nl=False)


@click.group()
@click.version_option(package_name="driftsim")
def main():
    """Sampling, unbiased simulation, and variational-inference experiments
    for drift-plus-Brownian latent diffusions."""


@main.command()
@click.option("--target", type=str, default=None, help="Target spec, e.g. gauss:m=1,0.")
@click.option("--steps", type=int, default=None)
@click.option("--runs", type=int, default=None)
@_SEED
@_OUT
@_WORKERS
@_CONFIG
def sample(target, steps, runs, seed, out, workers, config_path):
    """Simulate the bridge sampler and report terminal moments vs oracle."""
    raw = _assemble("sample", seed, workers, config_path, out,
                    {"target": target, "steps": steps, "runs": runs})
    _emit(_execute(raw), raw.get("out"))


@main.command()
@click.option("--drift", type=str, default=None, help="Drift spec, e.g. ou:theta=1.")
@click.option("--g", "observable", type=str, default=None, help="Observable: x, x2, norm2.")
@click.option("--mesh", type=str, default=None, help="Mesh spec, e.g. exp:lambda=1.")
@click.option("--x0", type=str, default=None, help="Start point, e.g. 1.0.")
@click.option("--runs", type=int, default=None)
@_SEED
@_OUT
@_WORKERS
@_CONFIG
def unbiased(drift, observable, mesh, x0, runs, seed, out, workers, config_path):
    """Renewal-mesh unbiased estimator report (mean, variance, bound)."""
    raw = _assemble("unbiased", seed, workers, config_path, out,
                    {"drift": drift, "g": observable, "mesh": mesh,
                     "x0": x0, "runs": runs})
    _emit(_execute(raw), raw.get("out"))


@main.command()
@click.option("--mesh", type=str, default=None)
@click.option("--theta", type=float, default=None)
@click.option("--runs", type=int, default=None)
@_SEED
@_OUT
@_WORKERS
@_CONFIG
def mgf(mesh, theta, runs, seed, out, workers, config_path):
    """Empirical MGF of the interior point count vs closed form / bound."""
    raw = _assemble("mgf", seed, workers, config_path, out,
                    {"mesh": mesh, "theta": theta, "runs": runs})
    _emit(_execute(raw), raw.get("out"))


@main.command(name="variance-sweep")
@click.option("--dims", type=str, default=None, help="Comma list, e.g. 1,2,4.")
@click.option("--horizon", "-T", "horizon", type=float, default=None,
              help="Uniform-mesh horizon T (> 1).")
@click.option("--theta", type=float, default=None, help="Mean-reversion rate.")
@click.option("--g", "observable", type=str, default=None)
@click.option("--runs", type=int, default=None)
@_SEED
@_OUT
@_WORKERS
@_CONFIG
def variance_sweep(dims, horizon, theta, observable, runs, seed, out, workers,
                   config_path):
    """Variance of the unbiased estimator: uniform vs matched exponential."""
    parsed_dims = None
    if dims is not None:
        try:
            parsed_dims = [int(v) for v in dims.split(",")]
        except ValueError:
            click.echo(f"error: cannot parse --dims {dims!r}", err=True)
            sys.exit(2)
    raw = _assemble("variance-sweep", seed, workers, config_path, out,
                    {"dims": parsed_dims, "T": horizon, "theta": theta,
                     "g": observable, "runs": runs})
    _emit(_execute(raw), raw.get("out"))


@main.command()
@click.option("--drift-p", type=str, default=None)
@click.option("--drift-q", type=str, default=None)
@click.option("--x0", type=str, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--runs", type=int, default=None)
@_SEED
@_OUT
@_WORKERS
@_CONFIG
def kl(drift_p, drift_q, x0, steps, runs, seed, out, workers, config_path):
    """Girsanov path-KL estimate between two drifts (paths under drift-p)."""
    raw = _assemble("kl", seed, workers, config_path, out,
                    {"drift_p": drift_p, "drift_q": drift_q, "x0": x0,
                     "steps": steps, "runs": runs})
    _emit(_execute(raw), raw.get("out"))


@main.command()
@click.option("--control", type=str, default=None,
              help="Control spec: const-shift:phi=..., ou:A=diag(...), optimal:y=..., zero.")
@click.option("--base", type=str, default=None, help="Base drift spec (default zero).")
@click.option("--y", "y_obs", type=str, default=None, help="Observation vector.")
@click.option("--x0", type=str, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--runs", type=int, default=None)
@_SEED
@_OUT
@_WORKERS
@_CONFIG
def vi(control, base, y_obs, x0, steps, runs, seed, out, workers, config_path):
    """Variational free energy of a control vs the exact Gaussian NLL."""
    raw = _assemble("vi", seed, workers, config_path, out,
                    {"control": control, "base": base, "y": y_obs, "x0": x0,
                     "steps": steps, "runs": runs})
    _emit(_execute(raw), raw.get("out"))


@main.command()
@click.option("--target", type=str, default=None)
@click.option("--eps", type=float, default=None)
@click.option("--radius", "-R", "radius", type=float, default=None)
@click.option("--resolution", type=int, default=None)
@click.option("--retries", type=int, default=None,
              help="Size-doubling budget on validation failure (default 6).")
@_SEED
@_OUT
@_WORKERS
@_CONFIG
def cloud(target, eps, radius, resolution, retries, seed, out, workers,
          config_path):
    """Build and validate a point cloud; write its points as CSV.

    The validation report row goes to stdout; --out receives the points
    (header z_0..z_{d-1}, one point per row).
    """
    raw = _assemble("cloud", seed, workers, config_path, out,
                    {"target": target, "eps": eps, "radius": radius,
                     "resolution": resolution, "retries": retries})
    result = _execute(raw)
    out_path = raw.get("out")
    if out_path:
        with open(out_path, "w", newline="") as fh:
            result.cloud.to_csv(fh)
    click.echo(result.csv_bytes().decode(), nl=False)


@main.command()
@click.option("--scale", type=click.Choice(["reduced", "full"]), default=None,
              help="Criterion scale (default reduced).")
@_SEED
@_OUT
@_WORKERS
@_CONFIG
def check(scale, seed, out, workers, config_path):
    """Run the full invariant suite; nonzero exit on any failure."""
    raw = _assemble("check", seed, workers, config_path, out,
                    {"scale": scale})
    result = _execute(raw)
    for line in result.check_lines:
        click.echo(line)
    if raw.get("out"):
        _emit(result, raw["out"])
    if result.failures:
        click.echo(f"{result.failures} criterion(s) failed", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
