import time

import pytest
from helpers import cluster_of, full_gpu, gpu_with, profiles, reachable_clusters
from hypothesis import given, settings
from hypothesis import strategies as st

from migsched.errors import ConfigError, DomainError
from migsched.profiles import ClusterState, GpuState, profile_by_name, span_free
from migsched.schedulers import (
    REJECT,
    ScheduleDecision,
    SchedulerKind,
    SchedulerState,
    best_index_order,
    bfbi_schedule,
    ff_schedule,
    mfi_deltas,
    mfi_schedule,
    rr_schedule,
    schedule,
    wfbi_schedule,
)
from migsched.validation import exhaustive_placements

accept = ScheduleDecision.accept


def _full_cluster(size):
    return cluster_of(*(full_gpu() for _ in range(size)))


def _four_small():
    return gpu_with(("1g.10gb", 0), ("1g.10gb", 2), ("1g.10gb", 4), ("1g.10gb", 6))


def test_scheduler_kind_names():
    assert SchedulerKind.from_name(" BF-BI ") is SchedulerKind.BF_BI
    assert SchedulerKind.WF_BI.label == "WF-BI"
    assert [k.mig_aware for k in SchedulerKind] == [True, False, False, True, True]
    with pytest.raises(ConfigError):
        SchedulerKind.from_name("best-fit")


def test_decision_text():
    assert str(REJECT) == "reject" and not REJECT.accepted
    assert str(accept(2, 4)) == "accept(gpu=2, index=4)"


def test_mfi_empty_gpu_prefers_index_six():
    cluster = ClusterState.empty(2)
    small = profile_by_name("1g.10gb")
    assert mfi_schedule(cluster, small) == accept(0, 6)
    deltas = {d.start_index: d.delta for d in mfi_deltas(ClusterState.empty(1), small)}
    assert deltas == {0: 13, 1: 13, 2: 13, 3: 13, 4: 9, 5: 9, 6: 7}


def test_mfi_examples():
    for p in ("1g.10gb", "3g.40gb", "7g.80gb"):
        assert mfi_schedule(_full_cluster(3), profile_by_name(p)) == REJECT
    cluster = cluster_of(gpu_with(("1g.20gb", 0)), GpuState(0))
    assert mfi_schedule(cluster, profile_by_name("4g.40gb")) == accept(1, 0)


def test_mfi_delta_can_be_negative():
    # the last 1g.10gb slot disables every precheck
    gpu = GpuState.from_occupancy("###.####")
    deltas = mfi_deltas(ClusterState([gpu]), profile_by_name("1g.10gb"))
    assert [(d.start_index, d.delta) for d in deltas] == [(3, -6)]


def test_ff_examples():
    assert ff_schedule(ClusterState.empty(2), profile_by_name("2g.20gb")) == accept(0, 0)
    cluster = cluster_of(_four_small(), GpuState(0))
    wide = profile_by_name("1g.20gb")
    assert ff_schedule(cluster, wide) == accept(1, 0)
    assert ff_schedule(cluster, wide, strict_first_choice=True) == REJECT
    assert ff_schedule(_full_cluster(2), wide) == REJECT


def test_rr_examples():
    small = profile_by_name("1g.10gb")
    assert rr_schedule(0, ClusterState.empty(3), small) == (accept(0, 0), 1)
    cluster = cluster_of(GpuState(0), GpuState(0), full_gpu())
    assert rr_schedule(2, cluster, small) == (accept(0, 0), 1)
    assert rr_schedule(1, _full_cluster(3), small) == (REJECT, 1)
    with pytest.raises(DomainError):
        rr_schedule(3, ClusterState.empty(3), small)


def test_rr_strict_stops_at_first_candidate():
    cluster = cluster_of(GpuState(0), _four_small())
    wide = profile_by_name("2g.20gb")
    assert rr_schedule(1, cluster, wide) == (accept(0, 0), 1)
    assert rr_schedule(1, cluster, wide, strict_first_choice=True) == (REJECT, 1)


def test_best_index_order_examples():
    assert best_index_order(profile_by_name("1g.10gb")) == [6, 5, 4, 3, 2, 1, 0]
    assert best_index_order(profile_by_name("3g.40gb")) == [4, 0]
    assert best_index_order(profile_by_name("7g.80gb")) == [0]


def test_bfbi_examples():
    half = gpu_with(("4g.40gb", 0))
    assert bfbi_schedule(cluster_of(half, GpuState(0)), profile_by_name("2g.20gb")) == accept(0, 4)
    assert bfbi_schedule(ClusterState.empty(1), profile_by_name("1g.10gb")) == accept(0, 6)
    assert bfbi_schedule(_full_cluster(2), profile_by_name("1g.10gb")) == REJECT


def test_wfbi_examples():
    half = gpu_with(("4g.40gb", 0))
    assert wfbi_schedule(cluster_of(half, GpuState(0)), profile_by_name("2g.20gb")) == accept(1, 4)
    assert wfbi_schedule(ClusterState.empty(2), profile_by_name("1g.10gb")) == accept(0, 6)
    assert wfbi_schedule(_full_cluster(2), profile_by_name("1g.10gb")) == REJECT


def test_fit_strict_commits_to_best_gpu():
    # GPU0 has the fewest free slices but no legal 1g.20gb span
    cluster = cluster_of(_four_small(), GpuState(0))
    wide = profile_by_name("1g.20gb")
    assert bfbi_schedule(cluster, wide) == accept(1, 6)
    assert bfbi_schedule(cluster, wide, strict_first_choice=True) == REJECT


def test_schedule_threads_rr_cursor():
    state = SchedulerState.named("rr")
    cluster = ClusterState.empty(2)
    decision, state = schedule(state, cluster, profile_by_name("1g.10gb"))
    assert decision == accept(0, 0) and state.cursor == 1
    decision, state = schedule(state, cluster, profile_by_name("1g.10gb"))
    assert decision == accept(1, 0) and state.cursor == 0


@pytest.mark.property_based
@given(reachable_clusters(), profiles)
@settings(max_examples=1500)
def test_mfi_matches_exhaustive_minimum(cluster, profile):
    options = exhaustive_placements(cluster, profile)
    expected = accept(*min(options)[1:]) if options else REJECT
    assert mfi_schedule(cluster, profile) == expected


@pytest.mark.property_based
@given(reachable_clusters(), profiles, st.sampled_from(list(SchedulerKind)), st.booleans(), st.integers(0, 4))
@settings(max_examples=2000)
def test_every_scheduler_is_sound_and_pure(cluster, profile, kind, strict, cursor):
    state = SchedulerState(kind, cursor=cursor % len(cluster), strict_first_choice=strict)
    before = cluster.masks()
    decision, _ = schedule(state, cluster, profile)
    assert cluster.masks() == before
    if decision.accepted:
        assert decision.start_index in profile.feasible_indexes
        assert span_free(cluster.gpu(decision.gpu_id), decision.start_index, profile.mem_slices)
    if not strict:
        assert decision.accepted == bool(exhaustive_placements(cluster, profile))


@pytest.mark.property_based
@given(reachable_clusters(), profiles, st.sampled_from(list(SchedulerKind)))
@settings(max_examples=500)
def test_schedulers_are_deterministic(cluster, profile, kind):
    state = SchedulerState(kind)
    assert schedule(state, cluster, profile) == schedule(state, cluster, profile)


@pytest.mark.slow
def test_mfi_latency_grows_linearly():
    small = profile_by_name("1g.10gb")

    def per_call(size):
        cluster = cluster_of(*(gpu_with(("1g.10gb", 6)) for _ in range(size)))
        started = time.perf_counter()
        for _ in range(20):
            mfi_schedule(cluster, small)
        return (time.perf_counter() - started) / 20

    per_call(200)
    assert per_call(2000) / per_call(200) <= 13
