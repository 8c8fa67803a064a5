"""Command-line entry points: gen-city, tessellate, simulate, sweep, bench, report.

Exit codes: 0 success, 1 usage, 2 config/validation, 3 runtime, 4 partial sweep failure.
Set ``AIC_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) for diagnostics on stderr.
"""

from __future__ import annotations

import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .errors import AicError, ConfigError

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3, 4


class PartialFailure(AicError):
    exit_code = EXIT_PARTIAL


def _setup_logging() -> None:
    level = os.environ.get("AIC_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load_scenario(scenario, city_dir, kind=None, fraction=None, seed=None, workers=None, ablate_sa=False):
    from .engine import ScenarioConfig

    sc = ScenarioConfig.load(scenario) if scenario else ScenarioConfig()
    changes = {}
    if city_dir:
        changes.update(city_dir=str(Path(city_dir).resolve()), synthetic=None)
    if kind:
        changes["tessellation"] = kind
    if fraction is not None:
        changes["fraction"] = fraction
    if seed is not None:
        changes["seed"] = seed
    if workers is not None:
        changes["workers"] = workers
    if ablate_sa:
        changes["super_agents"] = False
    return replace(sc, **changes) if changes else sc


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def cli():
    """Agent-in-cell epidemic simulator."""


@cli.command("gen-city")
@click.option("--grid", type=int, default=20, show_default=True, help="Street grid side length.")
@click.option("--pop", "population", type=int, default=50_000, show_default=True, help="Residents.")
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--no-river", is_flag=True, help="Omit the river barrier.")
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory.")
def gen_city(grid, population, seed, no_river, out):
    """Write a synthetic city (streets, POIs, CBGs, visit patterns)."""
    from .geodata import SyntheticCityParams, generate_synthetic_city, write_city

    city = generate_synthetic_city(SyntheticCityParams(grid_size=grid, population=population, seed=seed,
                                                       river=not no_river))
    write_city(city, out)
    cats: dict[str, int] = {}
    for p in city.pois:
        cats[p.category] = cats.get(p.category, 0) + 1
    click.echo(f"nodes {city.graph.n_nodes} edges {city.graph.n_edges} cbgs {len(city.cbgs)} "
               f"population {sum(c.population for c in city.cbgs)} pois {len(city.pois)}")
    for c in sorted(cats):
        click.echo(f"  {c}: {cats[c]}")


@cli.command()
@click.option("--city-dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--kind", required=True, help="NT, CBG, VD_r, VD_s, VD_i, KMEANS_r, KMEANS_s, KMEANS_i, RMCBG, CBGVD.")
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write cells as JSON lines.")
def tessellate(city_dir, kind, seed, workers, out):
    """Build one tessellation and print its statistics."""
    from .geodata import load_city
    from .tessellation import KINDS, make_tessellation, tessellation_to_jsonl

    if kind not in KINDS:
        raise ConfigError(f"unknown tessellation kind {kind!r}; choose from {', '.join(KINDS)}")
    city = load_city(city_dir)
    b = make_tessellation(kind, city, seed=seed, workers=workers)
    sizes = np.array([len(c.member_nodes) for c in b.tess.cells])
    click.echo(f"kind {kind} cells {b.tess.n_cells} cbgs {len(city.cbgs)}")
    click.echo(f"nodes per cell min {sizes.min()} mean {sizes.mean():.2f} max {sizes.max()}")
    mass = b.tess.cbg_mass()
    dev = max((abs(v - 1.0) for v in mass.values()), default=0.0)
    click.echo(f"cbg fractions covered {len(mass)} max deviation from 1 {dev:.3g}")
    if b.pixel_map is not None:
        click.echo(f"pixel conflicts {b.pixel_map.conflicts}")
    if out:
        Path(out).write_text(tessellation_to_jsonl(b.tess, city.graph))


@cli.command()
@click.option("--scenario", type=click.Path(dir_okay=False), default=None, help="Scenario JSON.")
@click.option("--city-dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--kind", default=None)
@click.option("--fraction", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--ablate-sa", is_flag=True, help="Sample agents instead of grouping them into super-agents.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def simulate(scenario, city_dir, kind, fraction, seed, workers, ablate_sa, out):
    """Run one scenario and write events.bin, series.csv, run_meta.json."""
    from .engine import World, run

    sc = _load_scenario(scenario, city_dir, kind, fraction, seed, workers, ablate_sa)
    world = World(sc)  # all load and validation errors surface here, before minute 0
    result = run(sc, world)
    result.write(out)
    last = result.series[-1]
    click.echo(f"days {sc.days} infected {last[1]:.6f} dead {last[2]:.6f} events {len(result.events)} "
               f"wall {result.meta['wall_seconds']:.2f}s")


@cli.command()
@click.option("--scenario", type=click.Path(dir_okay=False), default=None)
@click.option("--city-dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--kind", "kinds", multiple=True, help="Repeatable; NT is always added.")
@click.option("--fraction", "fractions", type=float, multiple=True, help="Repeatable.")
@click.option("--reps", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Base seed.")
@click.option("--workers", type=int, default=None)
@click.option("--ablate-sa", is_flag=True, help="Also run every reduced fraction without super-agents.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def sweep(scenario, city_dir, kinds, fractions, reps, seed, workers, ablate_sa, out):
    """Tessellation x fraction x replication grid; writes metrics, errors, tau, histograms."""
    from .experiments import ALL_FRACTIONS, SweepSpec, run_sweep, write_sweep

    sc = _load_scenario(scenario, city_dir, workers=workers)
    spec = SweepSpec(kinds=list(kinds) or ["NT", "CBG", "VD_r", "CBGVD"],
                     fractions=list(fractions) or list(ALL_FRACTIONS), replications=reps, base_seed=seed,
                     ablate_sa=ablate_sa)
    res = run_sweep(sc, spec)
    paths = write_sweep(res, out)
    click.echo(f"runs {len(res.records)} failures {len(res.failures)} target {res.target.poi_id}")
    for name in sorted(paths):
        click.echo(f"  {paths[name]}")
    if res.failures:
        raise PartialFailure(f"{len(res.failures)} replication(s) failed; see sweep.json")


@cli.command()
@click.option("--scenario", type=click.Path(dir_okay=False), default=None)
@click.option("--city-dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--kind", "kinds", multiple=True, help="Repeatable; default NT and VD_r.")
@click.option("--fraction", "fractions", type=float, multiple=True, help="Repeatable; default 1.0.")
@click.option("--workers", "workers", type=int, multiple=True, help="Repeatable; default 1 2 4 8 14 16.")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="bench.csv path.")
def bench(scenario, city_dir, kinds, fractions, workers, seed, out):
    """Wall time and peak memory over workers x fraction x tessellation."""
    from .experiments import BENCH_HEADER, run_bench
    from .metrics import write_csv

    sc = _load_scenario(scenario, city_dir, seed=seed)
    rows = run_bench(sc, list(kinds) or ["NT", "VD_r"], list(fractions) or [1.0],
                     list(workers) or [1, 2, 4, 8, 14, 16])
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(write_csv(rows, BENCH_HEADER))
    for r in rows:
        click.echo(f"{r[2]} f={r[1]} workers={r[0]}: {r[3]:.2f}s {r[4] / 2**20:.1f} MB")


@cli.command()
@click.option("--out", "sweep_dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="Sweep output directory.")
@click.option("--bench", "bench_csv", type=click.Path(exists=True, dir_okay=False), default=None)
def report(sweep_dir, bench_csv):
    """Markdown summary of a sweep (and optionally a benchmark)."""
    from .experiments import build_report

    text = build_report(sweep_dir, bench_csv)
    (Path(sweep_dir) / "report.md").write_text(text)
    click.echo(text, nl=False)


def main(argv=None) -> int:
    _setup_logging()
    try:
        cli.main(args=argv, prog_name="aicsim", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except AicError as e:
        click.echo(f"error: {e}", err=True)
        return e.exit_code
    except OSError as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - last-resort categorization
        logging.getLogger(__name__).debug("unhandled", exc_info=True)
        click.echo(f"runtime error: {type(e).__name__}: {e}", err=True)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
