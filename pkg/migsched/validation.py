"""Self-checks behind ``migsim.py validate``.

Each check returns a ``CheckResult``; none raises on a failed property. The
exhaustive placement search scores with ``frag_score_oracle`` so it stays
independent of the code it verifies.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Set, Tuple

import numpy as np

from migsched.engine import ActiveSet, release_due, step
from migsched.fragmentation import frag_score, frag_score_oracle
from migsched.profiles import (
    FULL_MASK,
    SLICES_PER_GPU,
    ClusterState,
    GpuState,
    MigProfile,
    Placement,
    allocate,
    profile_by_name,
    profile_catalog,
    span_free,
)
from migsched.schedulers import (
    REJECT,
    ScheduleDecision,
    SchedulerKind,
    SchedulerState,
    mfi_deltas,
    schedule,
)
from migsched.workload import TraceConfig, WorkloadRequest, generate_trace, resolve_distribution

logger = logging.getLogger(__name__)

SCORE_FIXTURES: Dict[str, int] = {
    "........": 0,
    "########": 0,
    ".....#..": 9,
    ".#......": 13,
}

EMPTY_GPU_SMALL_DELTAS: Dict[int, int] = {0: 13, 1: 13, 2: 13, 3: 13, 4: 9, 5: 9, 6: 7}


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    cases: int
    detail: str
    seconds: float = 0.0


def _vector(mask: int) -> Tuple[bool, ...]:
    return tuple(bool(mask >> i & 1) for i in range(SLICES_PER_GPU))


def random_cluster(rng: np.random.Generator, max_gpus: int = 5) -> ClusterState:
    """A reachable cluster state: random allocations applied to an empty cluster."""
    cluster = ClusterState.empty(int(rng.integers(1, max_gpus, endpoint=True)))
    catalog = profile_catalog()
    next_id = 0
    for gpu in cluster.gpus:
        for _ in range(int(rng.integers(0, 8, endpoint=True))):
            profile = catalog[int(rng.integers(len(catalog)))]
            index = profile.feasible_indexes[int(rng.integers(len(profile.feasible_indexes)))]
            if span_free(gpu, index, profile.mem_slices):
                allocate(gpu, Placement(gpu.gpu_id, index, profile), next_id)
                next_id += 1
    return cluster


def exhaustive_placements(cluster: ClusterState, profile: MigProfile) -> List[Tuple[int, int, int]]:
    """Every legal free placement as (delta, gpu_id, start_index), scored by the oracle."""
    out = []
    for gpu in cluster.gpus:
        before = _vector(gpu.mask)
        for i in profile.feasible_indexes:
            span = range(i, i + profile.mem_slices)
            if any(before[pos] for pos in span):
                continue
            after = tuple(used or pos in span for pos, used in enumerate(before))
            out.append((frag_score_oracle(after) - frag_score_oracle(before), gpu.gpu_id, i))
    return out


def check_oracle_equivalence() -> CheckResult:
    mismatches = [
        mask for mask in range(FULL_MASK + 1)
        if frag_score(GpuState(gpu_id=0, mask=mask)) != frag_score_oracle(_vector(mask))
    ]
    detail = "all occupancy vectors agree" if not mismatches else f"disagree on masks {mismatches[:8]}"
    return CheckResult("oracle equivalence", not mismatches, FULL_MASK + 1, detail)


def check_score_fixtures() -> CheckResult:
    wrong = []
    for text, expected in SCORE_FIXTURES.items():
        got = frag_score(GpuState.from_occupancy(text))
        if got != expected:
            wrong.append(f"{text}: {got} != {expected}")
    return CheckResult("score fixtures", not wrong, len(SCORE_FIXTURES), "; ".join(wrong) or "ok")


def check_empty_gpu_preference() -> CheckResult:
    cluster = ClusterState.empty(1)
    profile = profile_by_name("1g.10gb")
    deltas = {d.start_index: d.delta for d in mfi_deltas(cluster, profile)}
    decision, _ = schedule(SchedulerState(SchedulerKind.MFI), cluster, profile)
    ok = deltas == EMPTY_GPU_SMALL_DELTAS and decision == ScheduleDecision.accept(0, 6)
    return CheckResult("empty-GPU index preference", ok, 1, f"deltas={deltas} decision={decision}")


def check_mfi_optimality(cases: int = 1000, seed: int = 7) -> CheckResult:
    rng = np.random.default_rng(seed)
    catalog = profile_catalog()
    failures = []
    for k in range(cases):
        cluster = random_cluster(rng)
        profile = catalog[int(rng.integers(len(catalog)))]
        before = cluster.masks()
        decision, _ = schedule(SchedulerState(SchedulerKind.MFI), cluster, profile)
        options = exhaustive_placements(cluster, profile)
        expected = REJECT if not options else ScheduleDecision.accept(*min(options)[1:])
        if decision != expected or cluster.masks() != before:
            failures.append(f"case {k}: {profile.name} got {decision}, expected {expected}")
    return CheckResult("MFI greedy optimality", not failures, cases, "; ".join(failures[:3]) or "ok")


def check_scheduler_contract(cases: int = 1000, seed: int = 11) -> CheckResult:
    """Soundness, completeness and dry-run hygiene of every scheduler."""
    rng = np.random.default_rng(seed)
    catalog = profile_catalog()
    failures = []
    for k in range(cases):
        cluster = random_cluster(rng)
        profile = catalog[int(rng.integers(len(catalog)))]
        feasible = bool(exhaustive_placements(cluster, profile))
        before = cluster.masks()
        for kind in SchedulerKind:
            cursor = int(rng.integers(len(cluster)))
            decision, _ = schedule(SchedulerState(kind, cursor=cursor), cluster, profile)
            if cluster.masks() != before:
                failures.append(f"case {k}: {kind.label} mutated the cluster")
            if decision.accepted:
                gpu = cluster.gpu(decision.gpu_id)
                legal = decision.start_index in profile.feasible_indexes
                if not legal or not span_free(gpu, decision.start_index, profile.mem_slices):
                    failures.append(f"case {k}: {kind.label} unsound {decision} for {profile.name}")
            if decision.accepted != feasible:
                failures.append(f"case {k}: {kind.label} returned {decision}, feasible={feasible}")
    return CheckResult("scheduler soundness/completeness", not failures, cases * len(SchedulerKind), "; ".join(failures[:3]) or "ok")


def _hosted_ids(cluster: ClusterState) -> Set[int]:
    return {wid for gpu in cluster.gpus for wid in gpu.instances}


def _replay_checked(
    kind: SchedulerKind, label: str, cluster_size: int, trace: List[WorkloadRequest]
) -> Tuple[int, List[str]]:
    """Replay ``trace`` and stop at the first slot that breaks an invariant."""
    cluster = ClusterState.empty(cluster_size)
    state = SchedulerState(kind)
    active = ActiveSet()
    accepted: Dict[int, Tuple[int, int]] = {}
    rejected: Set[int] = set()
    cases = 0
    for request in trace:
        slot = request.arrival_slot
        release_due(cluster, active, slot)
        decision, state = step(cluster, state, active, request)
        if decision.accepted:
            accepted[request.workload_id] = (slot, slot + request.duration_slots)
        else:
            rejected.add(request.workload_id)
        hosted = _hosted_ids(cluster)
        alive = {w for w, (start, end) in accepted.items() if start <= slot < end}
        occupied = sum(p.mem_slices for g in cluster.gpus for p, _ in g.instances.values())
        cases += 1
        failures = []
        if hosted != alive:
            failures.append(f"{label} slot {slot}: hosted {sorted(hosted ^ alive)} mismatch")
        if hosted & rejected:
            failures.append(f"{label} slot {slot}: rejected workloads placed")
        if occupied != cluster.occupied_slices():
            failures.append(f"{label} slot {slot}: slice conservation broken")
        if failures:
            return cases, failures
    return cases, []


def check_engine_invariants(cluster_size: int = 8, runs: int = 5, seed: int = 3) -> CheckResult:
    """Conservation, lifespan exactness and no-retry on seeded traces; stops at the first failure."""
    name = "engine invariants"
    cases = 0
    for kind in SchedulerKind:
        for distribution in ("uniform", "skew-small", "skew-big", "bimodal"):
            for run in range(runs):
                trace_config = TraceConfig.for_cluster(cluster_size, resolve_distribution(distribution), seed + run)
                checked, failures = _replay_checked(
                    kind, f"{kind.label}/{distribution}", cluster_size, generate_trace(trace_config)
                )
                cases += checked
                if failures:
                    return CheckResult(name, False, cases, "; ".join(failures))
    return CheckResult(name, True, cases, "ok")


CHECKS: Tuple[Callable[[], CheckResult], ...] = (
    check_oracle_equivalence,
    check_score_fixtures,
    check_empty_gpu_preference,
    check_mfi_optimality,
    check_scheduler_contract,
    check_engine_invariants,
)


def run_checks(checks: Optional[Tuple[Callable[[], CheckResult], ...]] = None) -> List[CheckResult]:
    results = []
    for check in checks or CHECKS:
        started = time.perf_counter()
        result = check()
        elapsed = time.perf_counter() - started
        results.append(CheckResult(result.name, result.passed, result.cases, result.detail, elapsed))
        log = logger.info if result.passed else logger.warning
        log("%s: %s (%d cases, %.2fs)", result.name, "pass" if result.passed else "FAIL", result.cases, elapsed)
    return results
