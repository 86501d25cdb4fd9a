#!/usr/bin/env python3
"""
MIG scheduling simulator CLI.

Runs batch experiments from a YAML spec, compares and exports their results,
and inspects the fragmentation score of single GPUs.
"""

from __future__ import annotations

import logging
import os
import sys
from typing import Optional, Sequence, Tuple

import click
import pandas as pd
from rich.console import Console
from rich.table import Table

from migsched import __version__
from migsched.config import apply_overrides, load_spec
from migsched.errors import MigSchedError, OccupancyFormatError
from migsched.fragmentation import frag_score, is_fragmented, score_breakdown
from migsched.profiles import ClusterState, GpuState, free_slices, profile_by_name
from migsched.reporting import (
    comparison_table,
    load_aggregates,
    plot_tables,
    replay_totals,
    run_experiment,
    write_comparison,
    write_plot_data,
    write_results,
)
from migsched.schedulers import SchedulerKind, mfi_deltas, mfi_schedule
from migsched.validation import run_checks
from migsched.workload import TraceConfig, generate_trace, read_trace, resolve_distribution, write_trace

logger = logging.getLogger("migsim")

DEFAULT_SPEC = os.path.join("experiments", "evaluation.yaml")

_SCHEDULER_CHOICE = click.Choice([k.value for k in SchedulerKind], case_sensitive=False)


def _frame_table(frame: pd.DataFrame, title: str, digits: int = 4) -> Table:
    table = Table(title=title)
    for column in frame.columns:
        table.add_column(str(column), justify="left" if frame[column].dtype == object else "right")
    for row in frame.itertuples(index=False):
        table.add_row(*(f"{v:.{digits}f}" if isinstance(v, float) else str(v) for v in row))
    return table


def _fail(e: Exception) -> click.ClickException:
    return click.ClickException(str(e))


@click.group()
@click.version_option(__version__, prog_name="migsim")
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for per-run detail.")
def cli(verbose: int) -> None:
    """Fragmentation-aware MIG scheduling simulator."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@cli.command()
@click.option("--spec", "spec_path", default=DEFAULT_SPEC, show_default=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, help="Base seed; per-run seeds are derived from it.")
@click.option("--runs", type=int, help="Independent simulations per cell.")
@click.option("--cluster-size", type=int, help="Number of GPUs (M).")
@click.option("--scheduler", "schedulers", multiple=True, type=_SCHEDULER_CHOICE, help="Restrict cells to these schedulers.")
@click.option("--distribution", "distributions", multiple=True, help="Restrict cells to these distributions.")
@click.option("--strict-first-choice/--skip-infeasible", default=None, help="Baseline handling of GPUs with no free legal span.")
@click.option("--out", "out_dir", help="Output directory (env MIGSIM_OUT_DIR).")
@click.option("--format", "formats", multiple=True, type=click.Choice(["csv", "json"]), help="Detail formats to write.")
@click.option("--parallelism", type=int, help="Worker processes (env MIGSIM_PARALLELISM).")
def run(
    spec_path: str,
    seed: Optional[int],
    runs: Optional[int],
    cluster_size: Optional[int],
    schedulers: Tuple[str, ...],
    distributions: Tuple[str, ...],
    strict_first_choice: Optional[bool],
    out_dir: Optional[str],
    formats: Tuple[str, ...],
    parallelism: Optional[int],
) -> None:
    """Run every (distribution, scheduler) cell of an experiment spec."""
    try:
        spec = apply_overrides(
            load_spec(spec_path),
            seed=seed,
            runs=runs,
            cluster_size=cluster_size,
            schedulers=schedulers,
            distributions=distributions,
            strict_first_choice=strict_first_choice,
            out_dir=out_dir,
            formats=formats,
            parallelism=parallelism,
        )
        logger.info("experiment %s: %d cells, M=%d, runs=%d", spec.name, len(spec.cells), spec.cluster_size, spec.runs)
        results = run_experiment(spec)
    except MigSchedError as e:
        raise _fail(e)
    try:
        written = write_results(spec, results)
    except OSError as e:
        raise click.ClickException(f"cannot write results to {spec.out_dir}: {e}")

    for cell, batch in results:
        final = batch.aggregate.table.iloc[-1]
        click.echo(
            f"{cell.key}: T={batch.horizon} acceptance={final['acceptance_rate_mean']:.4f} "
            f"severity={batch.aggregate.severity_mean:.4f}"
        )
    for path in written:
        click.echo(f"✓ wrote {path}")


@cli.command()
@click.argument("results", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--demand-point", default=85.0, show_default=True, type=float, help="GPU demand % to compare at.")
@click.option("--out", "out_dir", help="Also export the tables as CSV here.")
def compare(results: Sequence[str], demand_point: float, out_dir: Optional[str]) -> None:
    """Tabulate five metrics per (scheduler, distribution) at a demand point."""
    try:
        table = comparison_table(load_aggregates(results), demand_point)
    except MigSchedError as e:
        raise _fail(e)
    console = Console()
    console.print(_frame_table(table.raw.reset_index(), f"Raw metrics at {demand_point:g}% demand"))
    console.print(_frame_table(table.normalized.reset_index(), "Normalized to per-metric maximum"))
    if out_dir:
        try:
            for path in write_comparison(table, out_dir):
                click.echo(f"✓ wrote {path}")
        except OSError as e:
            raise click.ClickException(f"cannot write to {out_dir}: {e}")


@cli.command()
@click.argument("occupancy")
@click.option("--profile", "profile_name", help="Also show the MFI dry-run table for this profile.")
def inspect(occupancy: str, profile_name: Optional[str]) -> None:
    """Score one GPU given as 8 characters of '.' (free) and '#' (used)."""
    try:
        gpu = GpuState.from_occupancy(occupancy)
    except OccupancyFormatError as e:
        raise click.BadParameter(str(e), param_hint="OCCUPANCY")
    profile = None
    if profile_name:
        try:
            profile = profile_by_name(profile_name)
        except MigSchedError as e:
            raise click.BadParameter(str(e), param_hint="--profile")

    console = Console()
    free = free_slices(gpu)
    click.echo(f"occupancy {occupancy}  free slices ΔS={free}")
    click.echo(f"fragmentation score: {frag_score(gpu)}")
    if free == 0:
        click.echo("no profile passes the ΔS precheck")
    contributions = pd.DataFrame(
        [(c.profile.name, c.start_index, c.weight) for c in score_breakdown(gpu)],
        columns=["profile", "index", "weight"],
    )
    if not contributions.empty:
        console.print(_frame_table(contributions, "Blocked placements"))
        per_profile = contributions.groupby("profile", sort=False)["weight"].sum()
        click.echo("per profile: " + ", ".join(f"{name}:{w}" for name, w in per_profile.items()))

    if profile is None:
        return
    click.echo(f"{profile.name} fragmented: {'yes' if is_fragmented(gpu, profile) else 'no'}")
    cluster = ClusterState(gpus=[gpu])
    deltas = {d.start_index: d.delta for d in mfi_deltas(cluster, profile)}
    rows = [(i, deltas[i] if i in deltas else "blocked") for i in profile.feasible_indexes]
    console.print(_frame_table(pd.DataFrame(rows, columns=["index", "ΔF"]), f"Dry-run ΔF for {profile.name}"))
    decision = mfi_schedule(cluster, profile)
    if decision.accepted:
        click.echo(f"recommended index: {decision.start_index}")
    else:
        click.echo("recommended index: none (reject)")


@cli.command("plot-data")
@click.argument("results", nargs=-1, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="plot-data", show_default=True, help="Directory for the .tsv files.")
@click.option("--normalize", is_flag=True, help="Divide each metric by its maximum over all cells.")
def plot_data(results: Sequence[str], out_dir: str, normalize: bool) -> None:
    """Write plot-ready tab-separated tables; no rendering."""
    try:
        tables = plot_tables(load_aggregates(results), normalized=normalize)
    except MigSchedError as e:
        raise _fail(e)
    try:
        paths = write_plot_data(tables, out_dir)
    except OSError as e:
        raise click.ClickException(f"cannot write to {out_dir}: {e}")
    for path in paths:
        click.echo(f"✓ wrote {path}")


@cli.command()
def validate() -> None:
    """Run the oracle-equivalence and invariant checks."""
    results = run_checks()
    table = Table(title="Validation")
    for column in ("check", "result", "cases", "seconds", "detail"):
        table.add_column(column)
    for r in results:
        table.add_row(r.name, "pass" if r.passed else "FAIL", str(r.cases), f"{r.seconds:.2f}", r.detail)
    Console().print(table)
    if not all(r.passed for r in results):
        raise SystemExit(1)


@cli.command()
@click.option("--cluster-size", default=100, show_default=True, type=int)
@click.option("--distribution", default="uniform", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="JSON-lines file.")
def trace(cluster_size: int, distribution: str, seed: int, out_path: str) -> None:
    """Generate a workload trace and export it."""
    try:
        config = TraceConfig.for_cluster(cluster_size, resolve_distribution(distribution), seed)
        requests = generate_trace(config)
    except MigSchedError as e:
        raise _fail(e)
    try:
        write_trace(out_path, requests)
    except OSError as e:
        raise click.ClickException(f"cannot write {out_path}: {e}")
    click.echo(f"✓ wrote {len(requests)} workloads (T={config.horizon}) to {out_path}")


@cli.command()
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--cluster-size", default=100, show_default=True, type=int)
@click.option("--scheduler", "schedulers", multiple=True, type=_SCHEDULER_CHOICE, help="Defaults to all five.")
@click.option("--strict-first-choice", is_flag=True)
def replay(trace_path: str, cluster_size: int, schedulers: Tuple[str, ...], strict_first_choice: bool) -> None:
    """Run several schedulers on one exported trace."""
    try:
        totals = replay_totals(
            read_trace(trace_path),
            schedulers or [k.value for k in SchedulerKind],
            cluster_size,
            strict_first_choice,
        )
    except MigSchedError as e:
        raise _fail(e)
    Console().print(_frame_table(totals, f"Replay of {trace_path}"))


if __name__ == "__main__":
    cli()
