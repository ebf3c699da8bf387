"""Main CLI application."""

import typer

from enclosure_eit import __version__
from enclosure_eit.commands import indicator, mesh, oracle, reconstruct, verify

app = typer.Typer(
    name="enclosure-eit",
    help="Enclosure-method reconstruction of polygonal conductivity inclusions",
    no_args_is_help=True,
    context_settings={"help_option_names": ["-h", "--help"]},
)


def version_callback(value: bool) -> None:
    """Show version and exit."""
    if value:
        typer.echo(f"enclosure-eit version {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    version: bool = typer.Option(
        None,
        "--version",
        "-v",
        callback=version_callback,
        is_eager=True,
        help="Show version and exit",
    ),
) -> None:
    """Enclosure-method reconstruction of polygonal conductivity inclusions."""


# Register subcommands
app.command(name="mesh")(mesh.run)
app.command(name="indicator")(indicator.run)
app.command(name="reconstruct")(reconstruct.run)
app.command(name="verify")(verify.run)
app.command(name="oracle")(oracle.run)


if __name__ == "__main__":
    app()
