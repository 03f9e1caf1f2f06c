import logging

import click

from lecam.config import Experiment, OutputFormat, load_config
from lecam.errors import ConfigError, ExperimentError
from lecam.runner import execute

logger = logging.getLogger(__name__)


@click.command("run")
@click.argument("experiment", type=click.Choice([e.value for e in Experiment]))
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Random seed (default 42).")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Flat key = value config file.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output file for the result table.")
@click.option("--format", "fmt", type=click.Choice([f.value for f in OutputFormat]), default=None,
              help="Result file format.")
@click.option("--quiet", is_flag=True, help="Only log warnings and errors.")
@click.pass_context
def run_command(ctx: click.Context, experiment, seed, config_path, out, fmt, quiet):
    """Run one experiment and write its results and manifest."""
    if quiet:
        logging.getLogger().setLevel(logging.WARNING)
    try:
        cfg = load_config(config_path, experiment).with_flags(seed=seed, out=out, fmt=fmt)
    except ConfigError as e:
        click.echo(f"Error: {e}", err=True)
        ctx.exit(2)

    try:
        manifest, result = execute(cfg)
    except ExperimentError as e:
        click.echo(f"Error: {e}", err=True)
        ctx.exit(1)

    if result.report:
        click.echo(result.report)
    for path in manifest.artifacts:
        click.echo(f"wrote {path}")
    if manifest.status != "ok":
        click.echo(f"Failed: {manifest.error}", err=True)
        ctx.exit(1)
