import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from migsched.errors import ConfigError, DomainError
from migsched.profiles import profile_by_name
from migsched.workload import (
    DISTRIBUTIONS,
    ProfileDistribution,
    TraceConfig,
    compute_horizon,
    derive_seed,
    expected_width,
    generate_trace,
    read_trace,
    resolve_distribution,
    sample_duration,
    sample_durations,
    sample_profile,
    sample_profiles,
    write_trace,
)

FULL_ONLY = ProfileDistribution("full", {"7g.80gb": 1.0})


@pytest.mark.parametrize("name", sorted(DISTRIBUTIONS))
def test_builtin_distributions_are_valid(name):
    dist = resolve_distribution(name)
    assert dist.probabilities().sum() == pytest.approx(1.0)


def test_distribution_validation():
    with pytest.raises(ConfigError, match="unknown profiles"):
        ProfileDistribution("x", {"9g.90gb": 1.0})
    with pytest.raises(ConfigError, match="sums to"):
        ProfileDistribution("x", {"1g.10gb": 0.5})
    with pytest.raises(ConfigError, match="negative"):
        ProfileDistribution("x", {"1g.10gb": 1.5, "1g.20gb": -0.5})
    with pytest.raises(ConfigError):
        resolve_distribution("zipf")


def test_custom_distribution_shadows_builtin():
    dist = resolve_distribution("uniform", {"uniform": {"1g.10gb": 1.0}})
    assert expected_width(dist) == 1.0


def test_horizon_examples():
    assert expected_width(resolve_distribution("uniform")) == pytest.approx(3.5)
    assert compute_horizon(100, resolve_distribution("uniform")) == 229
    assert compute_horizon(1, FULL_ONLY) == 1
    assert expected_width(resolve_distribution("skew-small")) == pytest.approx(2.4)
    assert compute_horizon(100, resolve_distribution("skew-small")) == 334


def test_horizon_needs_positive_expectation():
    empty = ProfileDistribution.__new__(ProfileDistribution)
    object.__setattr__(empty, "name", "empty")
    object.__setattr__(empty, "pmf", {})
    with pytest.raises(DomainError):
        compute_horizon(10, empty)


def test_degenerate_sampling():
    rng = np.random.default_rng(0)
    only_small = ProfileDistribution("small", {"1g.10gb": 1.0})
    assert {p.name for p in sample_profiles(only_small, rng, 1000)} == {"1g.10gb"}
    assert sample_profile(only_small, rng).name == "1g.10gb"
    assert sample_duration(1, rng) == 1
    with pytest.raises(DomainError):
        sample_duration(0, rng)


def test_empirical_pmf_skew_big():
    rng = np.random.default_rng(12345)
    draws = sample_profiles(resolve_distribution("skew-big"), rng, 1_000_000)
    share = sum(1 for p in draws if p.name == "7g.80gb") / len(draws)
    assert abs(share - 0.30) <= 0.005


def test_empirical_pmf_uniform():
    rng = np.random.default_rng(99)
    draws = sample_profiles(resolve_distribution("uniform"), rng, 600_000)
    names, counts = np.unique([p.name for p in draws], return_counts=True)
    assert len(names) == 6
    assert np.all(np.abs(counts / len(draws) - 1 / 6) <= 0.005)


def test_empirical_duration_mean():
    durations = sample_durations(229, np.random.default_rng(7), 1_000_000)
    assert durations.min() == 1 and durations.max() == 229
    assert abs(durations.mean() - 115.0) <= 0.5


def test_trace_shape():
    config = TraceConfig.for_cluster(100, resolve_distribution("uniform"), seed=42)
    trace = generate_trace(config)
    assert config.horizon == 229 and len(trace) == 229
    assert [w.arrival_slot for w in trace] == list(range(229))
    assert [w.workload_id for w in trace] == list(range(229))
    assert all(1 <= w.duration_slots <= 229 for w in trace)


def test_trace_full_gpu_only():
    trace = generate_trace(TraceConfig.for_cluster(2, FULL_ONLY, seed=1))
    assert [w.profile.name for w in trace] == ["7g.80gb", "7g.80gb"]


def test_trace_batched_arrivals():
    config = TraceConfig.for_cluster(10, resolve_distribution("bimodal"), seed=3, arrivals_per_slot=3)
    trace = generate_trace(config)
    assert len(trace) == 3 * config.horizon
    assert [w.arrival_slot for w in trace[:6]] == [0, 0, 0, 1, 1, 1]


def test_trace_config_validation():
    dist = resolve_distribution("uniform")
    for kwargs in ({"cluster_size": 0}, {"horizon": 0}, {"seed": -1}, {"arrivals_per_slot": 0}):
        args = {"cluster_size": 4, "distribution": dist, "seed": 0, "horizon": 5, **kwargs}
        with pytest.raises(ConfigError):
            TraceConfig(**args)


def test_derived_seeds_are_stable_and_distinct():
    seeds = [derive_seed(2024, i) for i in range(100)]
    assert seeds == [derive_seed(2024, i) for i in range(100)]
    assert len(set(seeds)) == 100
    assert derive_seed(2024, 0) != derive_seed(2025, 0)


@pytest.mark.property_based
@given(st.integers(0, 2**64 - 1), st.sampled_from(sorted(DISTRIBUTIONS)), st.integers(1, 20))
@settings(max_examples=200, deadline=None)
def test_same_seed_same_trace(seed, name, size):
    config = TraceConfig.for_cluster(size, resolve_distribution(name), seed)
    assert generate_trace(config) == generate_trace(config)


@pytest.mark.property_based
@given(st.integers(1, 500), st.sampled_from(sorted(DISTRIBUTIONS)))
@settings(max_examples=300)
def test_horizon_reaches_capacity(size, name):
    dist = resolve_distribution(name)
    horizon = compute_horizon(size, dist)
    mean = expected_width(dist)
    assert horizon * mean >= 8 * size - 1e-6
    assert (horizon - 1) * mean < 8 * size


def test_trace_file_round_trip(tmp_path):
    trace = generate_trace(TraceConfig.for_cluster(5, resolve_distribution("skew-small"), seed=8))
    path = tmp_path / "nested" / "trace.jsonl"
    write_trace(str(path), trace)
    assert read_trace(str(path)) == trace
    first = path.read_text(encoding="utf-8").splitlines()[0]
    assert first.startswith('{"workload_id":0,"profile":')


def test_read_trace_rejects_bad_records(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"workload_id": 0, "profile": "2g.99gb", "arrival_slot": 0, "duration_slots": 1}\n')
    with pytest.raises(ConfigError, match="malformed"):
        read_trace(str(path))
    path.write_text('{"workload_id": 0, "profile": "2g.20gb", "arrival_slot": 0, "duration_slots": 0}\n')
    with pytest.raises(ConfigError, match="duration_slots"):
        read_trace(str(path))
    path.write_text(
        '{"workload_id": 0, "profile": "2g.20gb", "arrival_slot": 3, "duration_slots": 1}\n'
        '{"workload_id": 1, "profile": "2g.20gb", "arrival_slot": 1, "duration_slots": 1}\n'
    )
    with pytest.raises(ConfigError, match="ordered"):
        read_trace(str(path))


def test_profile_lookup_in_trace_matches_catalog():
    trace = generate_trace(TraceConfig.for_cluster(3, FULL_ONLY, seed=0))
    assert trace[0].profile is profile_by_name("7g.80gb")


def test_read_trace_rejects_duplicate_workload_ids(tmp_path):
    path = tmp_path / "dup.jsonl"
    path.write_text(
        '{"workload_id": 0, "profile": "1g.10gb", "arrival_slot": 0, "duration_slots": 3}\n'
        '{"workload_id": 0, "profile": "1g.10gb", "arrival_slot": 1, "duration_slots": 3}\n'
    )
    with pytest.raises(ConfigError, match="duplicate workload_id 0"):
        read_trace(str(path))
