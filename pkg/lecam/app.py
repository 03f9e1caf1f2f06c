import logging

import click

from lecam import __version__
from lecam.config import ledger_enabled, log_level

logger = logging.getLogger(__name__)


def create_app():
    logging.basicConfig(
        level=getattr(logging, log_level(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    @click.group()
    @click.version_option(__version__, prog_name="lecam")
    def app():
        """Le Cam deficiency estimation and experiment runner."""

    from lecam.commands import init_commands
    init_commands(app)

    if ledger_enabled():
        from lecam.db import init_db
        try:
            init_db()
        except Exception:
            logger.warning("Run ledger unavailable; continuing without it")

    return app
