from dotenv import load_dotenv
load_dotenv()

import logging

import click

from cachechain import settings
from cachechain.errors import EXIT_USAGE, CacheChainError
from commands import placement, policy, reproduce, schema, simulate


class ExperimentGroup(click.Group):
    """Maps domain errors onto exit codes: 1 usage/config, 2 acceptance, 3 internal invariant."""

    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as e:
            e.exit_code = EXIT_USAGE
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            # click would exit 2, which is reserved for acceptance failures
            e.exit_code = EXIT_USAGE
            raise
        except CacheChainError as e:
            click.echo(f"error: {e.detail}", err=True)
            for violation in getattr(e, "violations", []):
                click.echo(f"  - {violation}", err=True)
            ctx.exit(e.exit_code)


@click.group(cls=ExperimentGroup)
@click.option("--debug", is_flag=True, help="Verbose logging.")
def cli(debug):
    """Dynamic probabilistic caching experiments."""
    logging.basicConfig(
        level=logging.DEBUG if debug else settings.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


cli.add_command(placement.command)
cli.add_command(policy.command)
cli.add_command(simulate.command)
cli.add_command(reproduce.command)
cli.add_command(schema.command)

if __name__ == "__main__":
    cli()
