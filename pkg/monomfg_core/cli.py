"""Command-line interface for monomfg.

Subcommands:
- solve: epsilon continuation run with report, fields and residual trace
- check: certificate battery for the configured Hamiltonian
- infconv-table: envelope values against the brute-force oracle
- sweep: grid size / epsilon table on a thread pool
- diagnose: residuals and certificates of externally supplied fields

Exit codes: 0 success, 2 invalid input or usage, 3 solver failure or an
unconverged run, 4 certificate violation.
"""

import functools
import os
import sys
from collections.abc import Callable
from pathlib import Path

import click

from services.continuation import Verdict
from services.exceptions import MonoMFGError
from services.runs import (
    run_check,
    run_diagnose,
    run_infconv_table,
    run_solve,
    run_sweep,
)
from services.validation import RunConfig, load_config, with_overrides

from . import configure_logging
from .config import get_config
from .errors import ExitCode, report_error


def handle_errors(func: Callable) -> Callable:
    """Turn library errors into a message on stderr and their exit code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (MonoMFGError, ValueError) as e:
            raise click.exceptions.Exit(int(report_error(e))) from e

    return wrapper


def config_options(func: Callable) -> Callable:
    """Config file as a positional argument or via --config, plus --out/--quiet."""
    func = click.option(
        "--quiet", "-q", is_flag=True, help="Only print warnings and errors."
    )(func)
    func = click.option(
        "--out",
        "-o",
        type=click.Path(file_okay=False),
        help="Output directory (default: $MFG_OUTPUT_DIR/<config name>).",
    )(func)
    func = click.option(
        "--config",
        "-c",
        "config_opt",
        type=click.Path(exists=True, dir_okay=False),
        help="Run config file (JSON or YAML).",
    )(func)
    return click.argument(
        "config_arg",
        metavar="[CONFIG]",
        required=False,
        type=click.Path(exists=True, dir_okay=False),
    )(func)


def resolve_config_path(config_arg: str | None, config_opt: str | None) -> str:
    if config_arg and config_opt and config_arg != config_opt:
        raise click.UsageError("give the config either as CONFIG or via --config")
    path = config_arg or config_opt
    if path is None:
        raise click.UsageError("a config file is required (CONFIG or --config)")
    return path


def resolve_out_dir(cfg: RunConfig, config_path: str, out: str | None) -> str:
    if out:
        return out
    if cfg.output_dir:
        return cfg.output_dir
    return os.path.join(get_config().OUTPUT_DIR, Path(config_path).stem)


def load_run(
    config_arg: str | None,
    config_opt: str | None,
    out: str | None,
    quiet: bool,
    **overrides,
) -> tuple[RunConfig, str, str]:
    """Shared prologue: logging, config loading, overrides, output directory."""
    env_config = get_config()
    configure_logging(env_config.LOG_LEVEL, quiet)
    path = resolve_config_path(config_arg, config_opt)
    cfg = with_overrides(load_config(path), **overrides)
    return cfg, path, resolve_out_dir(cfg, path, out)


@click.group()
@click.version_option(package_name="monomfg")
def cli():
    """monomfg - stationary mean-field games as monotone variational inequalities."""


# === Solve ===
@cli.command()
@config_options
@click.option("--seed", type=int, help="Override the config seed.")
@click.option("--tol-hj", type=float, help="Target for both HJ residual maxima.")
@click.option("--tol-transport", type=float, help="Target for the transport L1 norm.")
@click.option("--stages", type=int, help="Number of continuation stages.")
@click.pass_context
@handle_errors
def solve(
    ctx: click.Context,
    config_arg: str | None,
    config_opt: str | None,
    out: str | None,
    quiet: bool,
    seed: int | None,
    tol_hj: float | None,
    tol_transport: float | None,
    stages: int | None,
):
    """Run the epsilon continuation and certify the final iterate."""
    cfg, path, out_dir = load_run(
        config_arg,
        config_opt,
        out,
        quiet,
        seed=seed,
        tol_hj=tol_hj,
        tol_transport=tol_transport,
        stages=stages,
    )
    if not quiet:
        click.echo(f"🚀 Solving {path} ({cfg.hamiltonian.family}, n={cfg.grid.n})...")

    result = run_solve(cfg, out_dir, resource=path)

    if not quiet:
        for record in result.track.records:
            mark = "✅" if record.converged else "⚠️ "
            click.echo(
                f"{mark} stage {record.stage}: eps={record.epsilon:g} "
                f"iterations={record.iterations} "
                f"hj+={record.hj_max_pos:.2e} transport={record.transport_l1:.2e}"
            )
        click.echo(f"📁 Outputs written to {out_dir}")

    if result.verdict is Verdict.UNCONVERGED:
        click.echo(f"❌ Verdict: {result.verdict}", err=True)
        ctx.exit(ExitCode.SOLVER_FAILURE)
    click.echo(f"✅ Verdict: {result.verdict}")
    return ExitCode.OK


# === Certificates ===
@cli.command()
@config_options
@click.option("--seed", type=int, help="Override the config seed.")
@handle_errors
def check(
    config_arg: str | None,
    config_opt: str | None,
    out: str | None,
    quiet: bool,
    seed: int | None,
):
    """Sample every certificate inequality of the configured Hamiltonian."""
    cfg, path, out_dir = load_run(config_arg, config_opt, out, quiet, seed=seed)
    if not quiet:
        click.echo(f"🔍 Checking {cfg.hamiltonian.family} Hamiltonian from {path}...")

    report = run_check(cfg, out_dir, resource=path)

    if not quiet:
        click.echo(f"✅ hmon minimum: {report['hmon']['worst']:.3e}")
        for growth in report["growth"]:
            click.echo(
                f"✅ {growth['name']} (C={growth['C']:g}): "
                f"worst slack {growth['worst']:.3e}"
            )
        click.echo(f"📁 Report written to {out_dir}")
    click.echo("✅ All certificates passed")
    return ExitCode.OK


@cli.command("infconv-table")
@config_options
@handle_errors
def infconv_table(
    config_arg: str | None, config_opt: str | None, out: str | None, quiet: bool
):
    """Tabulate the envelope, its minimizer and the oracle gap."""
    cfg, _, out_dir = load_run(config_arg, config_opt, out, quiet)
    rows = run_infconv_table(cfg, out_dir)
    if not quiet:
        click.echo(f"✅ {len(rows)} rows written to {out_dir}")
    return ExitCode.OK


# === Sweeps & diagnostics ===
@cli.command()
@config_options
@click.option("--seed", type=int, help="Override the config seed.")
@click.option(
    "--threads",
    type=click.IntRange(min=1),
    help="Worker threads, capped at $MFG_THREADS (default: $MFG_THREADS).",
)
@click.pass_context
@handle_errors
def sweep(
    ctx: click.Context,
    config_arg: str | None,
    config_opt: str | None,
    out: str | None,
    quiet: bool,
    seed: int | None,
    threads: int | None,
):
    """Solve every (grid size, epsilon) case of the sweep section."""
    cfg, _, out_dir = load_run(config_arg, config_opt, out, quiet, seed=seed)
    limit = get_config().THREADS
    workers = min(threads, limit) if threads else limit
    if not quiet:
        click.echo(f"📊 Sweeping on {workers} thread(s)...")

    rows = run_sweep(cfg, out_dir, workers)
    failures = [row for row in rows if row[2] == "failed"]
    if not quiet:
        click.echo(f"📁 {len(rows)} cases written to {out_dir}")
    if failures:
        click.echo(f"❌ {len(failures)} case(s) failed", err=True)
        ctx.exit(ExitCode.SOLVER_FAILURE)
    return ExitCode.OK


@cli.command()
@click.argument("m_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("u_file", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--config",
    "-c",
    "config_opt",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="Run config providing the Hamiltonian, potential and targets.",
)
@click.option(
    "--epsilon",
    type=click.FloatRange(min=0.0, max=1.0),
    default=0.0,
    show_default=True,
    help="Regularization level the residuals are measured at.",
)
@click.option("--out", "-o", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--quiet", "-q", is_flag=True, help="Only print warnings and errors.")
@handle_errors
def diagnose(
    m_file: str,
    u_file: str,
    config_opt: str,
    epsilon: float,
    out: str | None,
    quiet: bool,
):
    """Residuals and certificates of fields_m / fields_u dumps."""
    cfg, path, out_dir = load_run(None, config_opt, out, quiet)
    report = run_diagnose(cfg, m_file, u_file, out_dir, epsilon, resource=path)
    if not quiet:
        residuals = report["residuals"]
        click.echo(
            f"🔍 hj+={residuals['hj_max_pos']:.3e} "
            f"hj(support)={residuals['hj_max_on_support']:.3e} "
            f"transport={residuals['transport_l1']:.3e}"
        )
        click.echo(f"📁 Report written to {out_dir}")
    click.echo(f"✅ Verdict: {report['verdict']}")
    return ExitCode.OK


def cli_main(argv: list[str] | None = None) -> int:
    """Run the CLI and return its exit code instead of exiting."""
    try:
        result = cli.main(args=argv, prog_name="monomfg", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    return int(result or 0)


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
