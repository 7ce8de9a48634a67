"""CLI entry point for bandpath.

Usage:
    python -m bandpath verify   --config configs/acceptance.yaml --seed 7
    python -m bandpath delta-p  --config configs/acceptance.yaml --threads 8
    python -m bandpath converge --config configs/acceptance.yaml --out results/
    python -m bandpath sample   --config configs/acceptance.yaml

Exit codes: 0 all passed, 1 numerical failure, 2 usage or configuration error.
"""

from __future__ import annotations

import sys
from typing import Callable

import click
from dotenv import load_dotenv

load_dotenv()

from . import __version__
from .config import load_config
from .errors import BandPathError, ConfigError
from .harness import run_converge, run_delta_p, run_sample, run_verify
from .logger import get_logger, setup_logging

EXIT_FAILURE = 1
EXIT_CONFIG = 2


@click.group()
@click.version_option(version=__version__, prog_name="bandpath")
@click.option("--verbose", "-v", is_flag=True, default=False, help="Verbose logging (acceptance rates, fits).")
def cli(verbose: bool):
    """bandpath: Monte Carlo checks of integration by parts between two curves."""
    setup_logging(verbose=verbose)


def _run_options(fn: Callable) -> Callable:
    fn = click.option("--out", default=None, type=click.Path(file_okay=False),
                      help="Output directory (overrides the run file and BANDPATH_OUTPUT_DIR).")(fn)
    fn = click.option("--threads", default=None, type=click.IntRange(min=1),
                      help="Worker threads (overrides the run file and BANDPATH_THREADS).")(fn)
    fn = click.option("--seed", default=None, type=click.IntRange(0, 2**64 - 1),
                      help="Master seed, unsigned 64-bit (overrides the run file).")(fn)
    fn = click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False),
                      help="YAML run file.")(fn)
    return fn


def _dispatch(runner: Callable[..., int], config_path: str, seed: int | None,
              threads: int | None, out: str | None) -> None:
    logger = get_logger()
    try:
        config, digest = load_config(config_path)
        code = runner(config, digest=digest, seed=seed, threads=threads, out=out)
    except ConfigError as exc:
        click.echo(f"Error: {config_path}: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except BandPathError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        sys.exit(EXIT_FAILURE)
    sys.exit(code)


# ── Subcommands ─────────────────────────────────────────────────────────────


@cli.command("verify")
@_run_options
def verify_cmd(config_path: str, seed: int | None, threads: int | None, out: str | None):
    """Check the integration-by-parts identity for every scenario."""
    _dispatch(run_verify, config_path, seed, threads, out)


@cli.command("delta-p")
@_run_options
def delta_p_cmd(config_path: str, seed: int | None, threads: int | None, out: str | None):
    """Estimate infinitesimal probabilities by the grid, definition, lemma and τ routes."""
    _dispatch(run_delta_p, config_path, seed, threads, out)


@cli.command("converge")
@_run_options
def converge_cmd(config_path: str, seed: int | None, threads: int | None, out: str | None):
    """Tabulate estimators over a grid-size schedule with an extrapolated limit."""
    _dispatch(run_converge, config_path, seed, threads, out)


@cli.command("sample")
@_run_options
def sample_cmd(config_path: str, seed: int | None, threads: int | None, out: str | None):
    """Dump bridge, conditioned, excursion, house-moving, meander or Bessel-type paths."""
    _dispatch(run_sample, config_path, seed, threads, out)


# ── Entry point ─────────────────────────────────────────────────────────────


def main():
    cli()


if __name__ == "__main__":
    main()
