"""Placement decisions for one MIG profile request.

Five schedulers share one contract: given the cluster and a requested profile
they return ``ScheduleDecision.accept(gpu_id, start_index)`` or ``REJECT``.
None of them mutates the cluster; the simulator commits accepted placements.

  - MFI picks the placement with the smallest fragmentation-score increase.
  - FF and RR are MIG-agnostic: they only look at free slices and take the
    first free index in ascending order.
  - BF-BI and WF-BI pick the GPU with the least (resp. most) free slices left
    after the allocation and try indexes in ``best_index_order``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

from migsched.errors import ConfigError, DomainError
from migsched.fragmentation import score_table
from migsched.profiles import ClusterState, GpuState, MigProfile, free_slices, span_mask

logger = logging.getLogger(__name__)


class SchedulerKind(str, Enum):
    MFI = "mfi"
    FF = "ff"
    RR = "rr"
    BF_BI = "bf-bi"
    WF_BI = "wf-bi"

    @classmethod
    def from_name(cls, name: str) -> "SchedulerKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ConfigError(f"unknown scheduler {name!r}; expected one of {[k.value for k in cls]}") from None

    @property
    def label(self) -> str:
        return self.value.upper()

    @property
    def mig_aware(self) -> bool:
        """False for the baselines that ignore placement indexes when choosing."""
        return self not in (SchedulerKind.FF, SchedulerKind.RR)


@dataclass(frozen=True)
class ScheduleDecision:
    gpu_id: Optional[int] = None
    start_index: Optional[int] = None

    @classmethod
    def accept(cls, gpu_id: int, start_index: int) -> "ScheduleDecision":
        return cls(gpu_id=gpu_id, start_index=start_index)

    @property
    def accepted(self) -> bool:
        return self.gpu_id is not None

    def __str__(self) -> str:
        if not self.accepted:
            return "reject"
        return f"accept(gpu={self.gpu_id}, index={self.start_index})"


REJECT = ScheduleDecision()


@dataclass(frozen=True)
class FragDelta:
    gpu_id: int
    start_index: int
    delta: int


@lru_cache(maxsize=None)
def _spans(profile: MigProfile) -> Tuple[Tuple[int, int], ...]:
    return tuple((i, span_mask(i, profile.mem_slices)) for i in profile.feasible_indexes)


def best_index_order(profile: MigProfile) -> List[int]:
    """Index preference of the MIG-aware baselines: highest index first.

    Keeps low indexes, which the big profiles need, free for as long as possible.
    """
    return sorted(profile.feasible_indexes, reverse=True)


def _first_free_index(gpu: GpuState, profile: MigProfile, order: Sequence[int]) -> Optional[int]:
    for i in order:
        if not gpu.mask & span_mask(i, profile.mem_slices):
            return i
    return None


def _iter_mfi_deltas(cluster: ClusterState, profile: MigProfile) -> Iterator[FragDelta]:
    table = score_table()
    width = profile.mem_slices
    spans = _spans(profile)
    for gpu in cluster.gpus:
        if width > free_slices(gpu):
            continue
        base = table[gpu.mask]
        for i, span in spans:
            if gpu.mask & span:
                continue
            # dry run: score the mask the allocation would produce
            yield FragDelta(gpu.gpu_id, i, table[gpu.mask | span] - base)


def mfi_deltas(cluster: ClusterState, profile: MigProfile) -> List[FragDelta]:
    """Score change of every feasible placement, in (gpu_id, start_index) order."""
    return list(_iter_mfi_deltas(cluster, profile))


def mfi_schedule(cluster: ClusterState, profile: MigProfile) -> ScheduleDecision:
    best: Optional[FragDelta] = None
    for d in _iter_mfi_deltas(cluster, profile):
        # strict '<' keeps the lowest (gpu_id, start_index) on ties
        if best is None or d.delta < best.delta:
            best = d
    if best is None:
        return REJECT
    return ScheduleDecision.accept(best.gpu_id, best.start_index)


def _scan(gpus: Iterable[GpuState], profile: MigProfile, strict_first_choice: bool) -> ScheduleDecision:
    width = profile.mem_slices
    for gpu in gpus:
        if width > free_slices(gpu):
            continue
        index = _first_free_index(gpu, profile, profile.feasible_indexes)
        if index is not None:
            return ScheduleDecision.accept(gpu.gpu_id, index)
        if strict_first_choice:
            return REJECT
    return REJECT


def ff_schedule(cluster: ClusterState, profile: MigProfile, strict_first_choice: bool = False) -> ScheduleDecision:
    return _scan(cluster.gpus, profile, strict_first_choice)


def rr_schedule(
    cursor: int,
    cluster: ClusterState,
    profile: MigProfile,
    strict_first_choice: bool = False,
) -> Tuple[ScheduleDecision, int]:
    """Scan from ``cursor`` with wrap-around. Returns the decision and the next cursor."""
    size = len(cluster.gpus)
    if not 0 <= cursor < size:
        raise DomainError(f"round-robin cursor {cursor} outside [0, {size})")
    order = (cluster.gpus[(cursor + k) % size] for k in range(size))
    decision = _scan(order, profile, strict_first_choice)
    if decision.accepted:
        return decision, (decision.gpu_id + 1) % size
    return decision, cursor


def _fit_schedule(
    cluster: ClusterState,
    profile: MigProfile,
    prefer_fullest: bool,
    strict_first_choice: bool,
) -> ScheduleDecision:
    order = best_index_order(profile)
    width = profile.mem_slices
    chosen: Optional[Tuple[int, Optional[int]]] = None
    chosen_left = 0
    for gpu in cluster.gpus:
        left = free_slices(gpu) - width
        if left < 0:
            continue
        if chosen is not None and not (left < chosen_left if prefer_fullest else left > chosen_left):
            continue
        index = _first_free_index(gpu, profile, order)
        if index is None and not strict_first_choice:
            continue
        chosen, chosen_left = (gpu.gpu_id, index), left
    if chosen is None or chosen[1] is None:
        return REJECT
    return ScheduleDecision.accept(chosen[0], chosen[1])


def bfbi_schedule(cluster: ClusterState, profile: MigProfile, strict_first_choice: bool = False) -> ScheduleDecision:
    return _fit_schedule(cluster, profile, prefer_fullest=True, strict_first_choice=strict_first_choice)


def wfbi_schedule(cluster: ClusterState, profile: MigProfile, strict_first_choice: bool = False) -> ScheduleDecision:
    return _fit_schedule(cluster, profile, prefer_fullest=False, strict_first_choice=strict_first_choice)


@dataclass(frozen=True)
class SchedulerState:
    """Scheduler selection plus the state it threads between calls (the RR cursor)."""

    kind: SchedulerKind
    cursor: int = 0
    strict_first_choice: bool = False

    @classmethod
    def named(cls, name: str, strict_first_choice: bool = False) -> "SchedulerState":
        return cls(kind=SchedulerKind.from_name(name), strict_first_choice=strict_first_choice)


def schedule(
    state: SchedulerState,
    cluster: ClusterState,
    profile: MigProfile,
) -> Tuple[ScheduleDecision, SchedulerState]:
    kind = state.kind
    strict = state.strict_first_choice
    if kind is SchedulerKind.MFI:
        return mfi_schedule(cluster, profile), state
    if kind is SchedulerKind.FF:
        return ff_schedule(cluster, profile, strict), state
    if kind is SchedulerKind.RR:
        decision, cursor = rr_schedule(state.cursor, cluster, profile, strict)
        return decision, replace(state, cursor=cursor)
    if kind is SchedulerKind.BF_BI:
        return bfbi_schedule(cluster, profile, strict), state
    if kind is SchedulerKind.WF_BI:
        return wfbi_schedule(cluster, profile, strict), state
    raise ConfigError(f"unsupported scheduler {kind!r}")
