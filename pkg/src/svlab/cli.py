"""Command line: ``svlab run`` and ``svlab fit``."""
import csv
import json
import logging
import sys
from pathlib import Path

import click

from .errors import ConfigError, SvlabError
from .scenarios import BUILTINS, EXPERIMENTS, builtin, fit_scaling, load_scenario, run_scenario

log = logging.getLogger("svlab")


def _deltas(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise click.BadParameter(f"not a comma-separated list of numbers: {text!r}") from None


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
def main(verbose):
    """Line-variety incidence experiments in R^4."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(message)s")


@main.command()
@click.option("--scenario", required=True, help=f"Builtin name ({', '.join(sorted(BUILTINS))}) or a TOML file.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--delta", "delta", default=None, help="Comma-separated scales, e.g. 0.125,0.0625.")
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=1, show_default=True, help="Worker threads over delta values.")
@click.option("--experiments", default=None,
              help=f"Comma-separated subset of {','.join(EXPERIMENTS)} (builtin default: directions).")
def run(scenario, out_dir, delta, seed, threads, experiments):
    """Run a scenario and write report.json plus CSV tables."""
    try:
        if Path(scenario).suffix == ".toml" or Path(scenario).is_file():
            sc = load_scenario(scenario)
        else:
            sc = builtin(scenario)
        if delta is not None:
            sc.deltas = _deltas(delta)
        if seed is not None:
            sc.seed = seed
        if experiments is not None:
            sc.experiments = tuple(e.strip() for e in experiments.split(",") if e.strip())
        # re-validate after overrides
        sc.__post_init__()
        report = run_scenario(sc, out_dir, threads=threads)
    except ConfigError as e:
        raise click.ClickException(f"config error: {e}") from None
    except SvlabError as e:
        raise click.ClickException(str(e)) from None
    fit = report.get("directions_fit")
    click.echo(f"wrote {out_dir}/report.json ({len(report['results'])} scales)")
    if fit:
        click.echo(f"direction-count slope {fit['slope']:.3f} (r2 {fit['r2']:.3f})")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--x", "xcol", default="delta", show_default=True)
@click.option("--y", "ycol", default="e_delta_dir", show_default=True)
def fit(in_path, xcol, ycol):
    """Least-squares exponent of a CSV column against 1/delta."""
    with open(in_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        pairs = [(float(r[xcol]), float(r[ycol])) for r in rows]
    except KeyError as e:
        raise click.ClickException(f"missing column {e}") from None
    try:
        res = fit_scaling(pairs)
    except SvlabError as e:
        raise click.ClickException(str(e)) from None
    click.echo(json.dumps(res.to_json(), indent=2, sort_keys=True))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
