"""Builders and hypothesis strategies shared by the test modules."""

from hypothesis import strategies as st

from migsched.profiles import (
    ClusterState,
    GpuState,
    Placement,
    allocate,
    profile_by_name,
    profile_catalog,
    span_free,
)

CATALOG = profile_catalog()


def gpu_with(*placements, gpu_id=0):
    """A GPU hosting ``("1g.10gb", 3)``-style placements, ids 0, 1, ..."""
    gpu = GpuState(gpu_id=gpu_id)
    for k, (name, index) in enumerate(placements):
        allocate(gpu, Placement(gpu_id, index, profile_by_name(name)), k)
    return gpu


def full_gpu(gpu_id=0):
    return gpu_with(("7g.80gb", 0), gpu_id=gpu_id)


def cluster_of(*gpus):
    """Renumbers the given GPUs 0..M-1 in order."""
    for i, g in enumerate(gpus):
        g.gpu_id = i
    return ClusterState(gpus=list(gpus))


profiles = st.sampled_from(CATALOG)

occupancy_masks = st.integers(min_value=0, max_value=255)

occupancy_strings = st.lists(st.sampled_from(".#"), min_size=8, max_size=8).map("".join)


@st.composite
def reachable_gpus(draw, gpu_id=0):
    """A GPU state produced by legal allocations only."""
    gpu = GpuState(gpu_id=gpu_id)
    attempts = draw(st.lists(st.tuples(profiles, st.integers(0, 6)), max_size=10))
    for k, (profile, pick) in enumerate(attempts):
        index = profile.feasible_indexes[pick % len(profile.feasible_indexes)]
        if span_free(gpu, index, profile.mem_slices):
            allocate(gpu, Placement(gpu_id, index, profile), k)
    return gpu


@st.composite
def reachable_clusters(draw, max_gpus=5):
    size = draw(st.integers(1, max_gpus))
    return ClusterState(gpus=[draw(reachable_gpus(gpu_id=i)) for i in range(size)])
