"""Seeded workload traces: profile distributions, horizon, arrivals and durations."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Set

import numpy as np

from migsched.errors import ConfigError, DomainError
from migsched.profiles import SLICES_PER_GPU, MigProfile, profile_by_name, profile_catalog

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.PCG64"

PMF_TOLERANCE = 1e-9

# Profile request mixes used in the evaluation.
DISTRIBUTIONS: Dict[str, Dict[str, float]] = {
    "uniform": {p.name: 1 / 6 for p in profile_catalog()},
    "skew-small": {
        "7g.80gb": 0.05,
        "4g.40gb": 0.10,
        "3g.40gb": 0.10,
        "2g.20gb": 0.20,
        "1g.20gb": 0.25,
        "1g.10gb": 0.30,
    },
    "skew-big": {
        "7g.80gb": 0.30,
        "4g.40gb": 0.25,
        "3g.40gb": 0.20,
        "2g.20gb": 0.10,
        "1g.20gb": 0.10,
        "1g.10gb": 0.05,
    },
    "bimodal": {
        "7g.80gb": 0.30,
        "4g.40gb": 0.15,
        "3g.40gb": 0.05,
        "2g.20gb": 0.05,
        "1g.20gb": 0.15,
        "1g.10gb": 0.30,
    },
}


@dataclass(frozen=True)
class ProfileDistribution:
    name: str
    pmf: Mapping[str, float]

    def __post_init__(self) -> None:
        known = {p.name for p in profile_catalog()}
        unknown = sorted(set(self.pmf) - known)
        if unknown:
            raise ConfigError(f"distribution {self.name!r} names unknown profiles {unknown}")
        if any(v < 0 for v in self.pmf.values()):
            raise ConfigError(f"distribution {self.name!r} has negative probabilities")
        total = sum(self.pmf.values())
        if abs(total - 1.0) > PMF_TOLERANCE:
            raise ConfigError(f"distribution {self.name!r} sums to {total}, not 1")

    def probabilities(self) -> np.ndarray:
        """Probabilities in catalog order."""
        return np.array([self.pmf.get(p.name, 0.0) for p in profile_catalog()], dtype=float)


def resolve_distribution(name: str, custom: Optional[Mapping[str, Mapping[str, float]]] = None) -> ProfileDistribution:
    if custom and name in custom:
        return ProfileDistribution(name=name, pmf=dict(custom[name]))
    if name in DISTRIBUTIONS:
        return ProfileDistribution(name=name, pmf=DISTRIBUTIONS[name])
    raise ConfigError(f"unknown distribution {name!r}; expected one of {sorted(DISTRIBUTIONS)} or a custom one")


def expected_width(dist: ProfileDistribution) -> float:
    """Mean requested memory slices per workload."""
    return sum(prob * profile_by_name(name).mem_slices for name, prob in dist.pmf.items())


def compute_horizon(cluster_size: int, dist: ProfileDistribution) -> int:
    """Slots until the expected cumulative request reaches cluster capacity (one arrival per slot)."""
    mean = expected_width(dist)
    if mean <= 0:
        raise DomainError(f"distribution {dist.name!r} requests no memory slices in expectation")
    # rounding guards against 800/3.5 style quotients landing a hair above an integer
    return max(1, math.ceil(round(SLICES_PER_GPU * cluster_size / mean, 9)))


@dataclass(frozen=True)
class WorkloadRequest:
    workload_id: int
    profile: MigProfile
    arrival_slot: int
    duration_slots: int


@dataclass(frozen=True)
class TraceConfig:
    cluster_size: int
    distribution: ProfileDistribution
    seed: int
    horizon: int
    arrivals_per_slot: int = 1

    def __post_init__(self) -> None:
        if self.cluster_size < 1:
            raise ConfigError(f"cluster_size must be >= 1, got {self.cluster_size}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.arrivals_per_slot < 1:
            raise ConfigError(f"arrivals_per_slot must be >= 1, got {self.arrivals_per_slot}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a non-negative 64-bit integer, got {self.seed}")

    @classmethod
    def for_cluster(
        cls,
        cluster_size: int,
        distribution: ProfileDistribution,
        seed: int,
        arrivals_per_slot: int = 1,
    ) -> "TraceConfig":
        return cls(
            cluster_size=cluster_size,
            distribution=distribution,
            seed=seed,
            horizon=compute_horizon(cluster_size, distribution),
            arrivals_per_slot=arrivals_per_slot,
        )


def derive_seed(base_seed: int, run_index: int) -> int:
    """Independent 64-bit seed for one run of a batch."""
    seq = np.random.SeedSequence(base_seed, spawn_key=(run_index,))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def sample_profiles(dist: ProfileDistribution, rng: np.random.Generator, size: int) -> List[MigProfile]:
    """Inverse-CDF sampling over the catalog in catalog order."""
    catalog = profile_catalog()
    probs = dist.probabilities()
    cdf = np.cumsum(probs)
    last = int(np.flatnonzero(probs)[-1])
    picks = np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), last)
    return [catalog[i] for i in picks]


def sample_profile(dist: ProfileDistribution, rng: np.random.Generator) -> MigProfile:
    return sample_profiles(dist, rng, 1)[0]


def sample_durations(horizon: int, rng: np.random.Generator, size: int) -> np.ndarray:
    if horizon < 1:
        raise DomainError(f"horizon must be >= 1, got {horizon}")
    return rng.integers(1, horizon, size=size, endpoint=True)


def sample_duration(horizon: int, rng: np.random.Generator) -> int:
    """Uniform on [1, horizon] inclusive."""
    return int(sample_durations(horizon, rng, 1)[0])


def generate_trace(config: TraceConfig) -> List[WorkloadRequest]:
    rng = np.random.default_rng(config.seed)
    count = config.horizon * config.arrivals_per_slot
    profiles = sample_profiles(config.distribution, rng, count)
    durations = sample_durations(config.horizon, rng, count)
    return [
        WorkloadRequest(
            workload_id=k,
            profile=profiles[k],
            arrival_slot=k // config.arrivals_per_slot,
            duration_slots=int(durations[k]),
        )
        for k in range(count)
    ]


def write_trace(path: str, trace: List[WorkloadRequest]) -> None:
    """Export as JSON lines: workload_id, profile, arrival_slot, duration_slots."""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for w in trace:
            record = {
                "workload_id": w.workload_id,
                "profile": w.profile.name,
                "arrival_slot": w.arrival_slot,
                "duration_slots": w.duration_slots,
            }
            f.write(json.dumps(record, separators=(",", ":")) + "\n")
    logger.info("wrote %d workloads to %s", len(trace), path)


def read_trace(path: str) -> List[WorkloadRequest]:
    trace: List[WorkloadRequest] = []
    seen_ids: Set[int] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                request = WorkloadRequest(
                    workload_id=int(raw["workload_id"]),
                    profile=profile_by_name(raw["profile"]),
                    arrival_slot=int(raw["arrival_slot"]),
                    duration_slots=int(raw["duration_slots"]),
                )
            except (ValueError, KeyError, TypeError) as e:
                raise ConfigError(f"{path}:{lineno}: malformed trace record ({e})") from e
            if request.arrival_slot < 0 or request.duration_slots < 1:
                raise ConfigError(f"{path}:{lineno}: arrival_slot must be >= 0 and duration_slots >= 1")
            if request.workload_id in seen_ids:
                raise ConfigError(f"{path}:{lineno}: duplicate workload_id {request.workload_id}")
            seen_ids.add(request.workload_id)
            trace.append(request)
    if [w.arrival_slot for w in trace] != sorted(w.arrival_slot for w in trace):
        raise ConfigError(f"{path}: records must be ordered by arrival_slot")
    return trace
