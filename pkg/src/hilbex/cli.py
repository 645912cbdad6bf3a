"""Command-line entry point: ``hilbex run <config.json> [--out DIR] [--threads N] [--validate-only] [-v]``."""

from __future__ import annotations

import json
import logging
import sys

import click

from .runner import EXIT_CONFIG, EXIT_OK, ConfigError, load_scenario, resolve_threads, run_scenario


@click.group()
def main():
    """Multiscale Hilbert expansion runner."""


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Override the output directory.")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Cap on worker threads (falls back to HILBEX_THREADS).")
@click.option("--validate-only", is_flag=True, help="Parse and validate the config, then exit.")
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def run(config, out, threads, validate_only, verbose):
    """Run the scenario described by CONFIG."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        scenario = load_scenario(config, out)
        cap = resolve_threads(threads)
    except ConfigError as exc:
        for line in exc.diagnostics:
            click.echo(f"config error: {line}", err=True)
        sys.exit(EXIT_CONFIG)
    if validate_only:
        click.echo(json.dumps({"valid": True, "name": scenario.name, "config": scenario.config.to_dict()}, indent=2, sort_keys=True))
        sys.exit(EXIT_OK)
    record = run_scenario(scenario, threads=cap)
    click.echo(json.dumps({"exit_code": record.exit_code, "stages": record.stages, "output_dir": scenario.output_dir}, indent=2, sort_keys=True))
    sys.exit(record.exit_code)


if __name__ == "__main__":
    main()
