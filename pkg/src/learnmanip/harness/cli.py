"""``learnmanip`` command line: run experiments, tabulate, emit plot data.

Exit codes: 0 success, 1 configuration error, 2 every seed failed.
"""

from __future__ import annotations

import logging
import sys

import click

from ..errors import ConfigError
from .report import PLOT_METRICS, aggregate_report, emit_plot_data, render_table
from .runner import EXIT_CONFIG, run_experiment


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
              help="YAML run configuration.")
@click.option("--seeds", type=click.IntRange(min=1), default=None, help="Use seeds 1..N instead of the config's.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Run directory (default: output_dir from the config).")
def run(config_path, seeds, out_dir):
    """Train every configured method on every seed."""
    try:
        outcome = run_experiment(config_path, out_dir, range(1, seeds + 1) if seeds else None)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    for name, m in outcome.summary["methods"].items():
        cell = "all seeds failed" if m["mean"] is None else f"{100 * m['mean']:.2f} ± {100 * m['std']:.2f}"
        click.echo(f"{name}: {cell} (n={m['n']})")
    click.echo(f"wrote {outcome.out_dir}")
    sys.exit(outcome.exit_code)


@cli.command()
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(exists=True, file_okay=False))
def report(run_dirs):
    """Method × setting table of mean ± std test accuracy (percent)."""
    try:
        table = aggregate_report(list(run_dirs))
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    for w in table["warnings"]:
        click.echo(f"warning: {w}", err=True)
    click.echo(render_table(table), nl=False)


@cli.command("plot-data")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--metric", "metrics", multiple=True, type=click.Choice(PLOT_METRICS),
              help="Metric to emit; repeatable (default: test_accuracy).")
@click.option("-o", "--output", type=click.File("w"), default="-", help="Destination (default stdout).")
def plot_data(run_dir, metrics, output):
    """Per-epoch mean and std across seeds, tab-separated long format."""
    text = emit_plot_data(run_dir, metrics or ("test_accuracy",))
    if text.count("\n") == 1:
        click.echo(f"warning: {run_dir} has no metrics records", err=True)
    output.write(text)


def main(argv=None):
    # click reports usage errors with status 2, which here means "all seeds failed"
    try:
        status = cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(EXIT_CONFIG)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_CONFIG)
    sys.exit(status or 0)


if __name__ == "__main__":
    main()
