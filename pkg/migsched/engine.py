"""Slot-driven cluster simulation and the batch runner.

Each slot first releases the workloads whose lifespan ended, then offers the
slot's arrivals to the scheduler. Accepted workloads are committed, rejected
ones are dropped for good. Metrics are snapshotted whenever the cumulative
requested demand crosses a point of the snapshot grid.
"""

from __future__ import annotations

import heapq
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import pandas as pd

from migsched.errors import ConfigError, MigSchedError, SimulationInvariantError
from migsched.fragmentation import cluster_severity
from migsched.profiles import SLICES_PER_GPU, ClusterState, Placement, allocate, check_gpu, release
from migsched.schedulers import ScheduleDecision, SchedulerKind, SchedulerState, schedule
from migsched.workload import (
    ProfileDistribution,
    TraceConfig,
    WorkloadRequest,
    compute_horizon,
    derive_seed,
    generate_trace,
    resolve_distribution,
)

logger = logging.getLogger(__name__)

DEFAULT_SNAPSHOT_GRID: Tuple[float, ...] = tuple(float(p) for p in range(5, 101, 5))

# Per-snapshot observables, in CSV column order.
METRICS: Tuple[str, ...] = (
    "demand_pct",
    "slot",
    "arrived",
    "accepted",
    "acceptance_rate",
    "utilization_pct",
    "active_gpus_pct",
    "frag_severity",
    "running",
)


@dataclass(frozen=True)
class SimConfig:
    cluster_size: int = 100
    distribution: str = "uniform"
    scheduler: str = "mfi"
    runs: int = 500
    seed: int = 0
    snapshot_grid: Tuple[float, ...] = DEFAULT_SNAPSHOT_GRID
    strict_first_choice: bool = False
    arrivals_per_slot: int = 1
    # pmf for a distribution name outside the built-in ones
    custom_pmf: Optional[Mapping[str, float]] = None

    def __post_init__(self) -> None:
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")
        if self.cluster_size < 1:
            raise ConfigError(f"cluster_size must be >= 1, got {self.cluster_size}")
        if self.arrivals_per_slot < 1:
            raise ConfigError(f"arrivals_per_slot must be >= 1, got {self.arrivals_per_slot}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a non-negative 64-bit integer, got {self.seed}")
        grid = tuple(sorted({float(p) for p in self.snapshot_grid}))
        if not grid or any(not 0 < p <= 100 for p in grid):
            raise ConfigError(f"snapshot_grid values must lie in (0, 100], got {list(self.snapshot_grid)}")
        object.__setattr__(self, "snapshot_grid", grid)
        SchedulerKind.from_name(self.scheduler)
        self.resolved_distribution()

    @property
    def scheduler_kind(self) -> SchedulerKind:
        return SchedulerKind.from_name(self.scheduler)

    def resolved_distribution(self) -> ProfileDistribution:
        custom = {self.distribution: self.custom_pmf} if self.custom_pmf is not None else None
        return resolve_distribution(self.distribution, custom)

    def horizon(self) -> int:
        return compute_horizon(self.cluster_size, self.resolved_distribution())


@dataclass(frozen=True)
class MetricsSnapshot:
    slot: int
    demand_pct: float
    # grid point that triggered the snapshot; None for the end-of-run snapshot
    grid_pct: Optional[float]
    arrived: int
    accepted: int
    acceptance_rate: float
    utilization_pct: float
    active_gpus_pct: float
    frag_severity: float
    running: int


@dataclass(frozen=True)
class RunResult:
    config: SimConfig
    run_index: int
    seed: int
    horizon: int
    snapshots: Tuple[MetricsSnapshot, ...]
    mean_frag_severity: float
    arrived: int
    accepted: int
    # (workload_id, gpu_id, start_index) per arrival when recorded; gpu_id None on reject
    decisions: Tuple[Tuple[int, Optional[int], Optional[int]], ...] = ()


class ActiveSet:
    """Hosted workloads keyed by the slot at whose start they are released."""

    def __init__(self) -> None:
        self._heap: List[Tuple[int, int, int, Hashable]] = []
        self._seq = 0

    def add(self, release_slot: int, gpu_id: int, instance_id: Hashable) -> None:
        heapq.heappush(self._heap, (release_slot, self._seq, gpu_id, instance_id))
        self._seq += 1

    def pop_due(self, slot: int) -> List[Tuple[int, Hashable]]:
        due: List[Tuple[int, Hashable]] = []
        while self._heap and self._heap[0][0] <= slot:
            _, _, gpu_id, instance_id = heapq.heappop(self._heap)
            due.append((gpu_id, instance_id))
        return due

    def __len__(self) -> int:
        return len(self._heap)


def release_due(cluster: ClusterState, active: ActiveSet, slot: int) -> int:
    """Release every workload whose lifespan ends at or before ``slot``."""
    due = active.pop_due(slot)
    for gpu_id, instance_id in due:
        try:
            release(cluster.gpu(gpu_id), instance_id)
        except MigSchedError as e:
            raise SimulationInvariantError(f"slot {slot}: cannot release {instance_id!r}: {e}") from e
    return len(due)


def step(
    cluster: ClusterState,
    state: SchedulerState,
    active: ActiveSet,
    request: WorkloadRequest,
) -> Tuple[ScheduleDecision, SchedulerState]:
    """Process one arrival at its slot: terminations first, then schedule and commit."""
    slot = request.arrival_slot
    release_due(cluster, active, slot)
    decision, state = schedule(state, cluster, request.profile)
    if decision.accepted:
        try:
            allocate(
                cluster.gpu(decision.gpu_id),
                Placement(decision.gpu_id, decision.start_index, request.profile),
                request.workload_id,
            )
        except MigSchedError as e:
            raise SimulationInvariantError(
                f"slot {slot}: {state.kind.label} returned an unusable placement {decision} for "
                f"workload {request.workload_id} ({request.profile.name}): {e}"
            ) from e
        active.add(slot + request.duration_slots, decision.gpu_id, request.workload_id)
    return decision, state


def _snapshot(
    cluster: ClusterState,
    slot: int,
    demand_pct: float,
    grid_pct: Optional[float],
    arrived: int,
    accepted: int,
    severity: float,
) -> MetricsSnapshot:
    size = cluster.size
    return MetricsSnapshot(
        slot=slot,
        demand_pct=min(demand_pct, 100.0),
        grid_pct=grid_pct,
        arrived=arrived,
        accepted=accepted,
        acceptance_rate=accepted / arrived if arrived else 1.0,
        utilization_pct=100.0 * cluster.occupied_slices() / (SLICES_PER_GPU * size),
        active_gpus_pct=100.0 * cluster.active_gpus() / size,
        frag_severity=severity,
        running=cluster.hosted(),
    )


def _check_slot(cluster: ClusterState, active: ActiveSet, slot: int) -> None:
    hosted_width = 0
    for gpu in cluster.gpus:
        problems = check_gpu(gpu)
        if problems:
            raise SimulationInvariantError(f"slot {slot}: " + "; ".join(problems))
        hosted_width += sum(profile.mem_slices for profile, _ in gpu.instances.values())
    if hosted_width != cluster.occupied_slices():
        raise SimulationInvariantError(f"slot {slot}: hosted widths {hosted_width} != occupied slices")
    if len(active) != cluster.hosted():
        raise SimulationInvariantError(f"slot {slot}: {len(active)} pending releases for {cluster.hosted()} instances")


def run_trace(
    config: SimConfig,
    trace: Sequence[WorkloadRequest],
    seed: int = 0,
    horizon: Optional[int] = None,
    run_index: int = 0,
    record_decisions: bool = False,
    check_invariants: bool = False,
) -> RunResult:
    """Simulate ``trace`` on an empty cluster under ``config.scheduler``.

    ``horizon`` defaults to one past the last arrival slot.
    """
    if horizon is None:
        horizon = max((w.arrival_slot for w in trace), default=0) + 1
    arrivals: Dict[int, List[WorkloadRequest]] = {}
    for w in trace:
        if not 0 <= w.arrival_slot < horizon:
            raise ConfigError(f"workload {w.workload_id} arrives at slot {w.arrival_slot}, outside [0, {horizon})")
        arrivals.setdefault(w.arrival_slot, []).append(w)

    cluster = ClusterState.empty(config.cluster_size)
    state = SchedulerState(kind=config.scheduler_kind, strict_first_choice=config.strict_first_choice)
    active = ActiveSet()
    capacity = SLICES_PER_GPU * config.cluster_size
    grid = config.snapshot_grid
    next_point = 0

    requested = arrived = accepted = 0
    severity_total = 0.0
    snapshots: List[MetricsSnapshot] = []
    decisions: List[Tuple[int, Optional[int], Optional[int]]] = []

    for slot in range(horizon):
        release_due(cluster, active, slot)
        for request in arrivals.get(slot, ()):
            decision, state = step(cluster, state, active, request)
            arrived += 1
            requested += request.profile.mem_slices
            if decision.accepted:
                accepted += 1
            if record_decisions:
                decisions.append((request.workload_id, decision.gpu_id, decision.start_index))
        if check_invariants:
            _check_slot(cluster, active, slot)

        severity = cluster_severity(cluster)
        severity_total += severity
        demand_pct = 100.0 * requested / capacity
        while next_point < len(grid) and demand_pct >= grid[next_point]:
            snapshots.append(_snapshot(cluster, slot, demand_pct, grid[next_point], arrived, accepted, severity))
            next_point += 1
        if slot == horizon - 1:
            snapshots.append(_snapshot(cluster, slot, demand_pct, None, arrived, accepted, severity))

    logger.debug(
        "%s/%s run %d: %d/%d accepted, mean severity %.4f",
        config.distribution,
        config.scheduler,
        run_index,
        accepted,
        arrived,
        severity_total / horizon,
    )
    return RunResult(
        config=config,
        run_index=run_index,
        seed=seed,
        horizon=horizon,
        snapshots=tuple(snapshots),
        mean_frag_severity=severity_total / horizon,
        arrived=arrived,
        accepted=accepted,
        decisions=tuple(decisions),
    )


def run_single(config: SimConfig, run_index: int, record_decisions: bool = False) -> RunResult:
    seed = derive_seed(config.seed, run_index)
    trace_config = TraceConfig(
        cluster_size=config.cluster_size,
        distribution=config.resolved_distribution(),
        seed=seed,
        horizon=config.horizon(),
        arrivals_per_slot=config.arrivals_per_slot,
    )
    trace = generate_trace(trace_config)
    return run_trace(
        config,
        trace,
        seed=seed,
        horizon=trace_config.horizon,
        run_index=run_index,
        record_decisions=record_decisions,
    )


def snapshot_frame(runs: Sequence[RunResult]) -> pd.DataFrame:
    """One row per snapshot of every run, in run then snapshot order."""
    rows = []
    for r in runs:
        for s in r.snapshots:
            row = {"run": r.run_index, "seed": r.seed, "grid_pct": s.grid_pct}
            row.update({m: getattr(s, m) for m in METRICS})
            rows.append(row)
    frame = pd.DataFrame(rows, columns=["run", "seed", "grid_pct", *METRICS])
    frame["grid_pct"] = frame["grid_pct"].astype(float)
    return frame


@dataclass(frozen=True)
class BatchAggregate:
    """Per-grid-point means and spreads across the runs of one batch.

    ``table`` holds one row per grid point (the end-of-run row has a NaN
    ``grid_pct`` and comes last) with ``n_runs`` and ``<metric>_mean`` /
    ``<metric>_std`` columns; spreads are population standard deviations.
    """

    table: pd.DataFrame
    severity_mean: float
    severity_std: float
    runs: int


def aggregate_runs(runs: Sequence[RunResult]) -> BatchAggregate:
    if not runs:
        raise ConfigError("cannot aggregate zero runs")
    frame = snapshot_frame(runs)
    grouped = frame.groupby("grid_pct", dropna=False, sort=True)[list(METRICS)]
    table = pd.concat(
        [
            grouped.size().rename("n_runs"),
            grouped.mean().add_suffix("_mean"),
            grouped.std(ddof=0).add_suffix("_std"),
        ],
        axis=1,
    ).reset_index()
    severities = pd.Series([r.mean_frag_severity for r in runs], dtype=float)
    return BatchAggregate(
        table=table,
        severity_mean=float(severities.mean()),
        severity_std=float(severities.std(ddof=0)),
        runs=len(runs),
    )


@dataclass(frozen=True)
class BatchResult:
    config: SimConfig
    horizon: int
    runs: Tuple[RunResult, ...]
    aggregate: BatchAggregate = field(repr=False)


def run_batch(config: SimConfig, parallelism: int = 1) -> BatchResult:
    """Run ``config.runs`` independent simulations; results stay in run-index order."""
    logger.info(
        "batch %s/%s: M=%d runs=%d parallelism=%d",
        config.distribution,
        config.scheduler,
        config.cluster_size,
        config.runs,
        parallelism,
    )
    if parallelism > 1 and config.runs > 1:
        chunksize = max(1, config.runs // (parallelism * 4))
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            runs = tuple(pool.map(partial(run_single, config), range(config.runs), chunksize=chunksize))
    else:
        runs = tuple(run_single(config, i) for i in range(config.runs))
    aggregate = aggregate_runs(runs)
    logger.info(
        "batch %s/%s done: mean severity %.4f",
        config.distribution,
        config.scheduler,
        aggregate.severity_mean,
    )
    return BatchResult(config=config, horizon=runs[0].horizon, runs=runs, aggregate=aggregate)
