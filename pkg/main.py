import logging

import click

from app.core.config import settings
from app.core.logging_config import setup_logging

# Commands
from app.commands import experiments

logger = logging.getLogger(__name__)


@click.group()
@click.option("--log-level", default=settings.LOG_LEVEL, show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level: str):
    """PNN-Training semi-supervised SVM experiments (two moons, USPS, custom files)."""
    setup_logging(log_level)


# 1. Single-method runs: seeded trials, per-trial reports, aggregate and plot data
cli.add_command(experiments.run_command)

# 2. Paired comparison of several methods on identical splits
cli.add_command(experiments.compare_command)


if __name__ == "__main__":
    cli()
