"""Experiment orchestration, result files, comparison tables and plot data.

Files written by ``write_results`` into an output directory:

  aggregate.csv   one row per cell and snapshot grid point (always)
  cells.json      per-cell aggregates and per-run summaries (always); per-run
                  snapshots are included when "json" is among the formats
  snapshots.csv   one row per snapshot of every run (when "csv" is among the formats)
  manifest.json   spec echo, seeds, rng algorithm, version and file digests

The engine keeps raw counts and percentages; normalization to the per-metric
maximum only happens here.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from migsched import __version__
from migsched.config import Cell, ExperimentSpec
from migsched.engine import BatchResult, SimConfig, run_batch, run_trace, snapshot_frame
from migsched.errors import ResultSchemaError
from migsched.schedulers import SchedulerKind
from migsched.workload import RNG_ALGORITHM, WorkloadRequest, derive_seed

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 2

AGGREGATE_FILE = "aggregate.csv"
SNAPSHOTS_FILE = "snapshots.csv"
CELLS_FILE = "cells.json"
MANIFEST_FILE = "manifest.json"

CELL_COLUMNS = ["distribution", "scheduler", "cluster_size", "arrivals_per_slot", "horizon", "runs"]

# Legend order of the evaluation figures.
SCHEDULER_ORDER = ["mfi", "bf-bi", "wf-bi", "ff", "rr"]

# comparison column -> aggregate.csv column
COMPARE_METRICS: Dict[str, str] = {
    "acceptance_rate": "acceptance_rate_mean",
    "scheduled_workloads": "accepted_mean",
    "utilization_pct": "utilization_pct_mean",
    "active_gpus_pct": "active_gpus_pct_mean",
    "frag_severity": "severity_time_avg_mean",
}

# plot-data file -> aggregate.csv column
CURVE_FILES: Dict[str, str] = {
    "acceptance_rate.tsv": "acceptance_rate_mean",
    "scheduled_workloads.tsv": "accepted_mean",
    "utilization.tsv": "utilization_pct_mean",
    "active_gpus.tsv": "active_gpus_pct_mean",
}
SEVERITY_FILE = "frag_severity.tsv"


def _utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def _scheduler_rank(name: str) -> int:
    return SCHEDULER_ORDER.index(name) if name in SCHEDULER_ORDER else len(SCHEDULER_ORDER)


def _label(scheduler: str) -> str:
    return SchedulerKind.from_name(scheduler).label


def run_experiment(spec: ExperimentSpec) -> List[Tuple[Cell, BatchResult]]:
    results = []
    for cell in spec.cells:
        results.append((cell, run_batch(spec.sim_config(cell), parallelism=spec.parallelism)))
    return results


def _cell_frame(batch: BatchResult, frame: pd.DataFrame) -> pd.DataFrame:
    config = batch.config
    head = pd.DataFrame(
        {
            "distribution": config.distribution,
            "scheduler": config.scheduler,
            "cluster_size": config.cluster_size,
            "arrivals_per_slot": config.arrivals_per_slot,
            "horizon": batch.horizon,
            "runs": config.runs,
        },
        index=frame.index,
    )
    return pd.concat([head, frame], axis=1)


def aggregate_table(batch: BatchResult) -> pd.DataFrame:
    """The batch aggregate as written to aggregate.csv."""
    frame = _cell_frame(batch, batch.aggregate.table)
    frame["severity_time_avg_mean"] = batch.aggregate.severity_mean
    frame["severity_time_avg_std"] = batch.aggregate.severity_std
    return frame


def snapshots_table(batch: BatchResult) -> pd.DataFrame:
    return _cell_frame(batch, snapshot_frame(batch.runs))


def _write_csv(frame: pd.DataFrame, path: str, sep: str = ",") -> None:
    frame.to_csv(path, index=False, sep=sep, lineterminator="\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def _cell_document(batch: BatchResult, with_snapshots: bool) -> Dict[str, Any]:
    runs = []
    for r in batch.runs:
        run: Dict[str, Any] = {
            "run": r.run_index,
            "seed": r.seed,
            "arrived": r.arrived,
            "accepted": r.accepted,
            "mean_frag_severity": r.mean_frag_severity,
        }
        if with_snapshots:
            run["snapshots"] = [asdict(s) for s in r.snapshots]
        runs.append(run)
    aggregate_rows = [
        {k: _json_safe(v) for k, v in row.items()} for row in batch.aggregate.table.to_dict(orient="records")
    ]
    config = batch.config
    return {
        "distribution": config.distribution,
        "scheduler": config.scheduler,
        "cluster_size": config.cluster_size,
        "arrivals_per_slot": config.arrivals_per_slot,
        "horizon": batch.horizon,
        "runs": config.runs,
        "strict_first_choice": config.strict_first_choice,
        "severity_time_avg_mean": batch.aggregate.severity_mean,
        "severity_time_avg_std": batch.aggregate.severity_std,
        "aggregate": aggregate_rows,
        "run_results": runs,
    }


def write_results(
    spec: ExperimentSpec,
    results: Sequence[Tuple[Cell, BatchResult]],
    out_dir: Optional[str] = None,
) -> List[str]:
    """Write result files for ``results``; returns the written paths, manifest last."""
    out_dir = out_dir or spec.out_dir
    os.makedirs(out_dir, exist_ok=True)
    written: List[str] = []

    path = os.path.join(out_dir, AGGREGATE_FILE)
    _write_csv(pd.concat([aggregate_table(b) for _, b in results], ignore_index=True), path)
    written.append(path)

    if "csv" in spec.formats:
        path = os.path.join(out_dir, SNAPSHOTS_FILE)
        _write_csv(pd.concat([snapshots_table(b) for _, b in results], ignore_index=True), path)
        written.append(path)

    path = os.path.join(out_dir, CELLS_FILE)
    with_snapshots = "json" in spec.formats
    with open(path, "w", encoding="utf-8") as f:
        json.dump(
            {"schema_version": SCHEMA_VERSION, "cells": [_cell_document(b, with_snapshots) for _, b in results]},
            f,
            indent=2,
        )
    written.append(path)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "package": "migsched",
        "version": __version__,
        "created_at": _utc_now_iso(),
        "rng": RNG_ALGORITHM,
        "spec": spec.to_dict(),
        "cells": [
            {
                "distribution": cell.distribution,
                "scheduler": cell.scheduler,
                "horizon": batch.horizon,
                "seeds": [r.seed for r in batch.runs],
            }
            for cell, batch in results
        ],
        "files": {os.path.basename(p): _sha256(p) for p in written},
    }
    path = os.path.join(out_dir, MANIFEST_FILE)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    written.append(path)

    for p in written:
        logger.info("wrote %s", p)
    return written


def expected_seeds(spec: ExperimentSpec) -> List[int]:
    """The per-run seeds every cell of ``spec`` uses."""
    return [derive_seed(spec.seed, i) for i in range(spec.runs)]


def load_aggregates(paths: Sequence[str]) -> pd.DataFrame:
    """Read aggregate.csv files (or result directories holding one) into one table."""
    if not paths:
        raise ResultSchemaError("no cells: no result files given")
    frames = []
    for p in paths:
        path = os.path.join(p, AGGREGATE_FILE) if os.path.isdir(p) else p
        try:
            frame = pd.read_csv(path, float_precision="round_trip")
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise ResultSchemaError(f"cannot read results {path}: {e}") from e
        missing = [c for c in [*CELL_COLUMNS, "grid_pct", *COMPARE_METRICS.values()] if c not in frame.columns]
        if missing:
            raise ResultSchemaError(f"{path} is not an aggregate table; missing columns {missing}")
        frames.append(frame)
    table = pd.concat(frames, ignore_index=True)
    if table.empty:
        raise ResultSchemaError("no cells")

    sizes = sorted(table["cluster_size"].unique())
    if len(sizes) > 1:
        raise ResultSchemaError(f"results mix cluster sizes {sizes}; compare runs of one cluster size")
    rates = sorted(table["arrivals_per_slot"].unique())
    if len(rates) > 1:
        raise ResultSchemaError(f"results mix arrival rates {rates} per slot; compare runs of one arrival rate")
    horizons = table.groupby("distribution")["horizon"].nunique()
    mixed = sorted(horizons[horizons > 1].index)
    if mixed:
        raise ResultSchemaError(f"results disagree on the horizon T for distributions {mixed}")
    per_file_cells = [set(zip(f["distribution"], f["scheduler"])) for f in frames]
    seen: set = set()
    for cells in per_file_cells:
        if seen & cells:
            raise ResultSchemaError(f"cells {sorted(seen & cells)} appear in more than one result file")
        seen |= cells
    return table


def normalize(frame: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    """Divide each column by its maximum; a column whose maximum is 0 becomes 1.0."""
    out = frame.copy()
    for c in columns:
        peak = out[c].max()
        out[c] = out[c] / peak if peak > 0 else 1.0
    return out


def _cell_order(table: pd.DataFrame) -> List[Tuple[str, str]]:
    distributions = list(dict.fromkeys(table["distribution"]))
    cells = set(zip(table["distribution"], table["scheduler"]))
    schedulers = sorted({s for _, s in cells}, key=lambda s: (_scheduler_rank(s), s))
    return [(d, s) for s in schedulers for d in distributions if (d, s) in cells]


@dataclass(frozen=True)
class ComparisonTable:
    """Five metrics per (scheduler, distribution) at one demand point."""

    demand_point: float
    raw: pd.DataFrame

    @property
    def normalized(self) -> pd.DataFrame:
        return normalize(self.raw, list(COMPARE_METRICS))


def comparison_table(aggregates: pd.DataFrame, demand_point: float) -> ComparisonTable:
    grid = aggregates[aggregates["grid_pct"].notna()]
    if grid.empty:
        raise ResultSchemaError("no cells: results hold no grid snapshots")
    rows = []
    for distribution, scheduler in _cell_order(grid):
        cell = grid[(grid["distribution"] == distribution) & (grid["scheduler"] == scheduler)]
        distance = (cell["grid_pct"] - demand_point).abs()
        # nearest grid point; ties go to the lower point
        best = cell.loc[distance[distance == distance.min()].index].sort_values("grid_pct").iloc[0]
        row = {"scheduler": _label(scheduler), "distribution": distribution, "snapshot_pct": best["grid_pct"]}
        row.update({name: best[column] for name, column in COMPARE_METRICS.items()})
        rows.append(row)
    raw = pd.DataFrame(rows).set_index(["scheduler", "distribution"])
    return ComparisonTable(demand_point=demand_point, raw=raw)


def write_comparison(table: ComparisonTable, out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    point = f"{table.demand_point:g}"
    paths = []
    for suffix, frame in (("", table.raw), ("_normalized", table.normalized)):
        path = os.path.join(out_dir, f"comparison_{point}{suffix}.csv")
        frame.reset_index().to_csv(path, index=False, lineterminator="\n")
        paths.append(path)
    return paths


def plot_tables(aggregates: pd.DataFrame, normalized: bool = False) -> Dict[str, pd.DataFrame]:
    """Plot-ready tables keyed by file name: four demand curves and the severity bars."""
    if aggregates.empty:
        raise ResultSchemaError("no cells")
    grid = aggregates[aggregates["grid_pct"].notna()].copy()
    order = _cell_order(aggregates)
    grid["series"] = [f"{d}/{_label(s)}" for d, s in zip(grid["distribution"], grid["scheduler"])]
    series = [f"{d}/{_label(s)}" for d, s in order]

    tables: Dict[str, pd.DataFrame] = {}
    for name, column in CURVE_FILES.items():
        wide = grid.pivot(index="grid_pct", columns="series", values=column).reindex(columns=series)
        if normalized:
            peak = wide.max().max()
            wide = wide / peak if peak > 0 else wide.notna().astype(float)
        wide = wide.reset_index().rename(columns={"grid_pct": "demand_pct"})
        wide.columns.name = None
        tables[name] = wide

    cells = aggregates.drop_duplicates(["distribution", "scheduler"])
    bars = cells.pivot(index="distribution", columns="scheduler", values="severity_time_avg_mean")
    distributions = list(dict.fromkeys(d for d, _ in order))
    schedulers = list(dict.fromkeys(s for _, s in order))
    bars = bars.reindex(index=distributions, columns=schedulers)
    if normalized:
        peak = bars.max().max()
        bars = bars / peak if peak > 0 else bars.notna().astype(float)
    bars.columns = [_label(s) for s in bars.columns]
    tables[SEVERITY_FILE] = bars.reset_index()
    return tables


def write_plot_data(tables: Dict[str, pd.DataFrame], out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, frame in tables.items():
        path = os.path.join(out_dir, name)
        _write_csv(frame, path, sep="\t")
        paths.append(path)
        logger.info("wrote %s", path)
    return paths


def replay_totals(
    trace: Sequence[WorkloadRequest],
    schedulers: Sequence[str],
    cluster_size: int,
    strict_first_choice: bool = False,
) -> pd.DataFrame:
    """Run each scheduler on the same trace and tabulate its totals."""
    rows = []
    for name in schedulers:
        config = SimConfig(
            cluster_size=cluster_size,
            scheduler=name,
            runs=1,
            strict_first_choice=strict_first_choice,
        )
        result = run_trace(config, trace)
        final = result.snapshots[-1]
        rows.append(
            {
                "scheduler": config.scheduler_kind.label,
                "arrived": result.arrived,
                "accepted": result.accepted,
                "acceptance_rate": final.acceptance_rate,
                "utilization_pct": final.utilization_pct,
                "active_gpus_pct": final.active_gpus_pct,
                "frag_severity": result.mean_frag_severity,
            }
        )
    return pd.DataFrame(rows)
