"""Command line interface for :mod:`latent_fda`.

Every command logs to stderr and writes its machine-readable artifacts to files.
Configuration, data, and shape errors exit with code 2 and numerical failures with code 3.
"""

from __future__ import annotations

import logging
import sys
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any, TypeVar

import click
from more_click import verbose_option
from tqdm.contrib.logging import logging_redirect_tqdm

from . import pipeline
from .utils import ConfigError, DataError, DimensionError, NumericalError

__all__ = [
    "main",
]

logger = logging.getLogger(__name__)

F = TypeVar("F", bound=Callable[..., Any])

#: Exit codes by the kind of failure
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


@contextmanager
def _exit_codes() -> Iterator[None]:
    try:
        yield
    except (ConfigError, DataError, DimensionError, FileNotFoundError) as e:
        click.secho(f"error: {e}", fg="red", err=True)
        sys.exit(EXIT_CONFIG)
    except NumericalError as e:
        click.secho(f"numerical error: {e}", fg="red", err=True)
        sys.exit(EXIT_NUMERICAL)


config_option = click.option(
    "--config",
    "config_path",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="A JSON run configuration",
)
out_option = click.option(
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    help="The output directory. Defaults to the configuration's, then to one under "
    "~/.data/latent_fda",
)
seed_option = click.option(
    "--seed", type=click.IntRange(0, 2**64 - 1), help="Overrides the configured seed"
)
threads_option = click.option(
    "--threads", type=click.IntRange(min=1), help="Overrides the configured number of threads"
)
run_option = click.option(
    "--run",
    "run_directory",
    required=True,
    type=click.Path(file_okay=False, exists=True, path_type=Path),
    help="The directory of a fitted run",
)


def _configured(func: F) -> F:
    """Add the shared options of commands driven by a run configuration."""
    for decorator in (verbose_option, threads_option, seed_option, out_option, config_option):
        func = decorator(func)
    return func


def _prepare(
    config_path: Path, out: Path | None, seed: int | None, threads: int | None
) -> tuple[pipeline.RunConfig, Path]:
    config = pipeline.load_run_config(config_path).with_overrides(seed=seed, threads=threads)
    directory = pipeline.resolve_output(config, out)
    logger.info("writing to %s", directory)
    return config, directory


def _report(paths: list[Path]) -> None:
    for path in paths:
        click.echo(path, err=True)


@click.group()
def main() -> None:
    """Fit and evaluate models of mixed continuous and binary functional data."""


@main.command()
@_configured
def simulate(config_path: Path, out: Path | None, seed: int | None, threads: int | None) -> None:
    """Generate a simulated dataset with its truth and held-out subjects."""
    with _exit_codes():
        config, directory = _prepare(config_path, out, seed, threads)
        _report(pipeline.run_simulate(config, directory))


@main.command()
@_configured
def cov(config_path: Path, out: Path | None, seed: int | None, threads: int | None) -> None:
    """Estimate the latent covariance and write one CSV per block."""
    with _exit_codes():
        config, directory = _prepare(config_path, out, seed, threads)
        _report(pipeline.run_cov(config, directory))


@main.command()
@_configured
def fpca(config_path: Path, out: Path | None, seed: int | None, threads: int | None) -> None:
    """Run the multivariate FPCA and write the eigensystem."""
    with _exit_codes():
        config, directory = _prepare(config_path, out, seed, threads)
        _report(pipeline.run_fpca(config, directory))


@main.command()
@_configured
@click.option("--progress/--no-progress", default=True, show_default=True)
def fit(
    config_path: Path, out: Path | None, seed: int | None, threads: int | None, progress: bool
) -> None:
    """Fit the model and write the draws, summaries, DIC, and manifest."""
    with _exit_codes(), logging_redirect_tqdm():
        config, directory = _prepare(config_path, out, seed, threads)
        _report(pipeline.run_fit(config, directory, progress=progress))


@main.command()
@run_option
@click.option(
    "--observed",
    type=click.Path(dir_okay=False, exists=True, path_type=Path),
    help="The responses the new subjects observe. Defaults to the run's simulated ones.",
)
@click.option(
    "--heldout",
    type=click.Path(dir_okay=False, exists=True, path_type=Path),
    help="The locations to predict. Defaults to the run's simulated ones.",
)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), help="Defaults to the run")
@seed_option
@verbose_option
def predict(
    run_directory: Path,
    observed: Path | None,
    heldout: Path | None,
    out: Path | None,
    seed: int | None,
) -> None:
    """Predict held-out responses of new subjects."""
    with _exit_codes():
        directory = out or run_directory
        directory.mkdir(parents=True, exist_ok=True)
        path = pipeline.run_predict(
            run_directory, directory, observed=observed, heldout=heldout, seed=seed
        )
        _report([path])


@main.command()
@run_option
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), help="Defaults to the run")
@verbose_option
def metrics(run_directory: Path, out: Path | None) -> None:
    """Compute MISE, coverage, MSPE, and DIC of a fitted run as JSON."""
    with _exit_codes():
        directory = out or run_directory
        directory.mkdir(parents=True, exist_ok=True)
        _report([pipeline.run_metrics(run_directory, directory)])


@main.command()
@_configured
def study(config_path: Path, out: Path | None, seed: int | None, threads: int | None) -> None:
    """Run a Monte Carlo study comparing model variants."""
    with _exit_codes(), logging_redirect_tqdm():
        config, directory = _prepare(config_path, out, seed, threads)
        _report(pipeline.run_study_command(config, directory))


if __name__ == "__main__":
    main()
