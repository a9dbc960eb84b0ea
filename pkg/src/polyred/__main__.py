from polyred.cli import cli

cli()
