"""MIG profile catalog and GPU/cluster occupancy state.

A GPU exposes 8 memory-slice positions. A profile occupies a contiguous run of
``mem_slices`` positions starting at one of its legal placement indexes.
Occupancy is kept as an 8-bit mask: bit ``i`` set means position ``i`` is
allocated.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple, Union

from migsched.errors import (
    ConfigError,
    DomainError,
    InfeasibleIndexError,
    InstanceIdError,
    OccupancyFormatError,
    SpanConflictError,
    SpanRangeError,
    UnknownProfileError,
)

logger = logging.getLogger(__name__)

SLICES_PER_GPU = 8
FULL_MASK = (1 << SLICES_PER_GPU) - 1

FREE_CHAR = "."
USED_CHAR = "#"

_PROFILE_NAME_RE = re.compile(r"^([1-7])g\.(\d+)gb$")


@dataclass(frozen=True)
class MigProfile:
    name: str
    compute_slices: int
    mem_slices: int
    feasible_indexes: Tuple[int, ...]

    def __post_init__(self) -> None:
        m = _PROFILE_NAME_RE.match(self.name)
        if not m or int(m.group(1)) != self.compute_slices:
            raise ConfigError(f"profile name {self.name!r} does not follow the <g>g.<mem>gb convention")
        if not 1 <= self.compute_slices <= 7:
            raise ConfigError(f"{self.name}: compute_slices must be in [1, 7]")
        if not 1 <= self.mem_slices <= SLICES_PER_GPU:
            raise ConfigError(f"{self.name}: mem_slices must be in [1, {SLICES_PER_GPU}]")
        if not self.feasible_indexes or list(self.feasible_indexes) != sorted(set(self.feasible_indexes)):
            raise ConfigError(f"{self.name}: feasible_indexes must be non-empty, ascending and unique")
        for i in self.feasible_indexes:
            if i < 0 or i + self.mem_slices > SLICES_PER_GPU:
                raise ConfigError(f"{self.name}: index {i} does not fit a span of {self.mem_slices}")

    def __str__(self) -> str:
        return self.name


# A100-80GB. 7g.80gb spans all 8 memory slices (80 GB), so a fully packed GPU
# scores zero fragmentation.
_A100_80GB: Tuple[MigProfile, ...] = (
    MigProfile("1g.10gb", compute_slices=1, mem_slices=1, feasible_indexes=(0, 1, 2, 3, 4, 5, 6)),
    MigProfile("1g.20gb", compute_slices=1, mem_slices=2, feasible_indexes=(0, 2, 4, 6)),
    MigProfile("2g.20gb", compute_slices=2, mem_slices=2, feasible_indexes=(0, 2, 4)),
    MigProfile("3g.40gb", compute_slices=3, mem_slices=4, feasible_indexes=(0, 4)),
    MigProfile("4g.40gb", compute_slices=4, mem_slices=4, feasible_indexes=(0,)),
    MigProfile("7g.80gb", compute_slices=7, mem_slices=8, feasible_indexes=(0,)),
)

_BY_NAME: Dict[str, MigProfile] = {p.name: p for p in _A100_80GB}


def profile_catalog() -> List[MigProfile]:
    """Supported profiles, ascending by (mem_slices, compute_slices)."""
    return list(_A100_80GB)


def profile_by_name(name: str) -> MigProfile:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise UnknownProfileError(f"unknown MIG profile {name!r}; expected one of {sorted(_BY_NAME)}") from None


def span_mask(start: int, width: int) -> int:
    if width < 1 or start < 0 or start + width > SLICES_PER_GPU:
        raise SpanRangeError(f"span start={start} width={width} is outside 0..{SLICES_PER_GPU}")
    return ((1 << width) - 1) << start


@dataclass(frozen=True)
class Placement:
    gpu_id: int
    start_index: int
    profile: MigProfile

    def __post_init__(self) -> None:
        if self.start_index not in self.profile.feasible_indexes:
            raise InfeasibleIndexError(
                f"{self.profile.name} cannot start at index {self.start_index}; "
                f"legal indexes are {list(self.profile.feasible_indexes)}"
            )

    @property
    def mask(self) -> int:
        return span_mask(self.start_index, self.profile.mem_slices)


@dataclass
class GpuState:
    """Occupancy of one GPU plus the instances hosted on it.

    ``instances`` maps an instance id to ``(profile, start_index)``. States
    built through ``allocate``/``release`` keep ``mask`` equal to the union
    of the instance spans; ``from_occupancy`` builds instance-free snapshots
    of arbitrary vectors for scoring and inspection.
    """

    gpu_id: int
    mask: int = 0
    instances: Dict[Hashable, Tuple[MigProfile, int]] = field(default_factory=dict)

    @classmethod
    def from_occupancy(cls, occupancy: Union[str, Sequence[bool]], gpu_id: int = 0) -> "GpuState":
        if isinstance(occupancy, str):
            occupancy = parse_occupancy(occupancy)
        if len(occupancy) != SLICES_PER_GPU:
            raise OccupancyFormatError(f"occupancy vector must have {SLICES_PER_GPU} positions, got {len(occupancy)}")
        mask = 0
        for i, used in enumerate(occupancy):
            if used:
                mask |= 1 << i
        return cls(gpu_id=gpu_id, mask=mask)

    @property
    def occupied(self) -> Tuple[bool, ...]:
        return tuple(bool(self.mask >> i & 1) for i in range(SLICES_PER_GPU))

    def __str__(self) -> str:
        return format_occupancy(self)


def span_free(gpu: GpuState, start: int, width: int) -> bool:
    return not gpu.mask & span_mask(start, width)


def free_slices(gpu: GpuState) -> int:
    """Unoccupied memory slices (ΔS_m)."""
    return SLICES_PER_GPU - gpu.mask.bit_count()


def allocate(gpu: GpuState, placement: Placement, instance_id: Hashable) -> GpuState:
    """Host ``instance_id`` on ``gpu`` at ``placement``. Mutates and returns ``gpu``."""
    if placement.gpu_id != gpu.gpu_id:
        raise DomainError(f"placement targets gpu {placement.gpu_id}, not gpu {gpu.gpu_id}")
    profile = placement.profile
    if placement.start_index not in profile.feasible_indexes:
        raise InfeasibleIndexError(f"{profile.name} cannot start at index {placement.start_index}")
    span = placement.mask
    if gpu.mask & span:
        raise SpanConflictError(
            f"gpu {gpu.gpu_id}: {profile.name}@{placement.start_index} overlaps occupied slices {format_occupancy(gpu)}"
        )
    if instance_id in gpu.instances:
        raise InstanceIdError(f"gpu {gpu.gpu_id} already hosts instance {instance_id!r}")
    gpu.mask |= span
    gpu.instances[instance_id] = (profile, placement.start_index)
    return gpu


def release(gpu: GpuState, instance_id: Hashable) -> GpuState:
    """Remove ``instance_id`` from ``gpu`` and clear exactly its span. Mutates and returns ``gpu``."""
    try:
        profile, start = gpu.instances.pop(instance_id)
    except KeyError:
        raise InstanceIdError(f"gpu {gpu.gpu_id} does not host instance {instance_id!r}") from None
    gpu.mask &= ~span_mask(start, profile.mem_slices)
    return gpu


def check_gpu(gpu: GpuState) -> List[str]:
    """Return violations of overlap freedom, feasibility closure and mask/instance agreement."""
    problems: List[str] = []
    covered = 0
    for instance_id, (profile, start) in gpu.instances.items():
        if start not in profile.feasible_indexes:
            problems.append(f"{instance_id!r}: {profile.name} at illegal index {start}")
            continue
        span = span_mask(start, profile.mem_slices)
        if covered & span:
            problems.append(f"{instance_id!r}: {profile.name}@{start} overlaps another instance")
        covered |= span
    if covered != gpu.mask:
        problems.append(f"gpu {gpu.gpu_id}: occupancy {format_occupancy(gpu)} does not match hosted spans")
    return problems


def parse_occupancy(text: str) -> Tuple[bool, ...]:
    """Parse the canonical encoding, e.g. ``".....#.."`` is position 5 occupied."""
    if len(text) != SLICES_PER_GPU or set(text) - {FREE_CHAR, USED_CHAR}:
        raise OccupancyFormatError(
            f"occupancy must be {SLICES_PER_GPU} characters of {FREE_CHAR!r}/{USED_CHAR!r}, got {text!r}"
        )
    return tuple(c == USED_CHAR for c in text)


def format_occupancy(gpu: GpuState) -> str:
    return "".join(USED_CHAR if used else FREE_CHAR for used in gpu.occupied)


def format_instances(gpu: GpuState) -> str:
    placed = sorted(gpu.instances.values(), key=lambda item: item[1])
    return " ".join(f"{profile.name}@{start}" for profile, start in placed)


@dataclass
class ClusterState:
    gpus: List[GpuState]

    def __post_init__(self) -> None:
        ids = [g.gpu_id for g in self.gpus]
        if ids != list(range(len(ids))):
            raise DomainError(f"gpu ids must be 0..M-1 in order, got {ids}")

    @classmethod
    def empty(cls, size: int) -> "ClusterState":
        if size < 1:
            raise DomainError(f"cluster needs at least one GPU, got {size}")
        return cls(gpus=[GpuState(gpu_id=i) for i in range(size)])

    @property
    def size(self) -> int:
        return len(self.gpus)

    def __len__(self) -> int:
        return len(self.gpus)

    def gpu(self, gpu_id: int) -> GpuState:
        return self.gpus[gpu_id]

    def masks(self) -> Tuple[int, ...]:
        return tuple(g.mask for g in self.gpus)

    def occupied_slices(self) -> int:
        return sum(g.mask.bit_count() for g in self.gpus)

    def active_gpus(self) -> int:
        """GPUs hosting at least one instance."""
        return sum(1 for g in self.gpus if g.instances)

    def hosted(self) -> int:
        return sum(len(g.instances) for g in self.gpus)

    def locate(self, instance_id: Hashable) -> Optional[int]:
        for g in self.gpus:
            if instance_id in g.instances:
                return g.gpu_id
        return None
