import logging

import click

from lecam import db
from lecam.models import Run

logger = logging.getLogger(__name__)


@click.command("runs")
@click.option("--limit", type=click.IntRange(min=1), default=20, show_default=True)
@click.pass_context
def runs_command(ctx: click.Context, limit):
    """List the most recent runs in the ledger."""
    session = db.SessionLocal()
    try:
        runs = session.query(Run).order_by(Run.created_at.desc(), Run.id.desc()).limit(limit).all()
        rows = [run.to_dict() for run in runs]
    except Exception as e:
        logger.error(f"Error reading run ledger: {str(e)}")
        click.echo(f"Error: cannot read run ledger ({e})", err=True)
        ctx.exit(1)
    finally:
        session.close()

    if not rows:
        click.echo("No runs recorded.")
        return
    for row in rows:
        wall = f"{row['wall_time']:.1f}s" if row["wall_time"] is not None else "-"
        line = (f"{row['id']:>5}  {row['experiment']:<15} seed={row['seed']:<6} {row['status']:<7} {wall:>8}  "
                f"{row['config_hash'][:12]}")
        if row["error"]:
            line += f"  {row['error']}"
        click.echo(line)
