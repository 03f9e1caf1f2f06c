import logging

import click

from lecam.commands.run import run_command
from lecam.commands.runs import runs_command

logger = logging.getLogger(__name__)


def init_commands(app: click.Group):
    app.add_command(run_command)
    app.add_command(runs_command)
    logger.debug(f"Commands: {', '.join(sorted(app.commands))}")
    return app
