"""Fragmentation predicate and fragmentation score of a GPU.

A GPU is fragmented with respect to a profile when it has at least as many
free memory slices as the profile needs, yet every legal start index of the
profile overlaps an occupied slice. The score adds the profile's memory-slice
width for every blocked (profile, index) pair, over the profiles that pass the
free-slice precheck.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, NewType, Sequence, Tuple

from migsched.errors import DomainError, OccupancyFormatError
from migsched.profiles import (
    FULL_MASK,
    SLICES_PER_GPU,
    ClusterState,
    GpuState,
    MigProfile,
    free_slices,
    profile_catalog,
    span_free,
)

logger = logging.getLogger(__name__)

FragScore = NewType("FragScore", int)

# Σ_p |I_p|·w(p) over the catalog.
MAX_SCORE = 41


@dataclass(frozen=True)
class Contribution:
    profile: MigProfile
    start_index: int
    weight: int


def is_fragmented(gpu: GpuState, profile: MigProfile) -> bool:
    if profile.mem_slices > free_slices(gpu):
        return False
    return not any(span_free(gpu, i, profile.mem_slices) for i in profile.feasible_indexes)


def fragmented_profiles(gpu: GpuState) -> List[MigProfile]:
    return [p for p in profile_catalog() if is_fragmented(gpu, p)]


def score_breakdown(gpu: GpuState) -> List[Contribution]:
    """Every (profile, index) pair the score counts, in catalog then index order."""
    delta_s = free_slices(gpu)
    contributions: List[Contribution] = []
    for profile in profile_catalog():
        if profile.mem_slices > delta_s:
            continue
        for i in profile.feasible_indexes:
            if not span_free(gpu, i, profile.mem_slices):
                contributions.append(Contribution(profile, i, profile.mem_slices))
    return contributions


def frag_score(gpu: GpuState) -> FragScore:
    return FragScore(sum(c.weight for c in score_breakdown(gpu)))


@lru_cache(maxsize=None)
def score_table() -> Tuple[int, ...]:
    """frag_score of every 8-bit occupancy mask, indexed by mask."""
    return tuple(frag_score(GpuState(gpu_id=0, mask=mask)) for mask in range(FULL_MASK + 1))


def mask_score(mask: int) -> int:
    return score_table()[mask]


def cluster_severity(cluster: ClusterState) -> float:
    """Mean fragmentation score over all GPUs, empty and full ones included."""
    if not cluster.gpus:
        raise DomainError("fragmentation severity is undefined for an empty cluster")
    table = score_table()
    return sum(table[g.mask] for g in cluster.gpus) / len(cluster.gpus)


# (width, legal start indexes) per A100-80GB profile, kept apart from the
# catalog so the oracle shares nothing with frag_score.
_ORACLE_PLACEMENTS = (
    (1, (0, 1, 2, 3, 4, 5, 6)),
    (2, (0, 2, 4, 6)),
    (2, (0, 2, 4)),
    (4, (0, 4)),
    (4, (0,)),
    (8, (0,)),
)


def frag_score_oracle(occupancy: Sequence[bool]) -> FragScore:
    """Brute-force score of a raw occupancy vector, derived from the definition."""
    if len(occupancy) != SLICES_PER_GPU:
        raise OccupancyFormatError(f"expected {SLICES_PER_GPU} positions, got {len(occupancy)}")
    unused = [pos for pos in range(SLICES_PER_GPU) if not occupancy[pos]]
    total = 0
    for width, starts in _ORACLE_PLACEMENTS:
        if len(unused) < width:
            continue
        for start in starts:
            if any(occupancy[pos] for pos in range(start, start + width)):
                total += width
    return FragScore(total)
