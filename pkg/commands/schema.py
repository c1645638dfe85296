import json

import click

from commands.config import ExperimentConfig


@click.command("schema")
def command():
    """Print the JSON schema of experiment configs."""
    click.echo(json.dumps(ExperimentConfig.model_json_schema(), indent=2, sort_keys=True))
