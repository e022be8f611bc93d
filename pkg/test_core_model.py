#!/usr/bin/env python3
"""
Tests for the observation model: tags, read rates, scopes, histories and the
likelihood, checked against exhaustive enumeration on tiny instances
"""

import itertools
import math

import numpy as np
import pytest

from core_model import (
    NONE,
    ContainmentMap,
    GroundTruthRecorder,
    ObservationHistory,
    ReadRateTable,
    TagIndex,
    TagKind,
    emission_log_prob,
    external_id,
    intersect_intervals,
    intervals_contain,
    log_likelihood,
    normalize_intervals,
    parse_external,
    sample_trace,
)


def brute_log_likelihood(history, containment, rates):
    """Sum over containers and epochs of log sum_a prior(a) prod p(readings | a)"""
    R = history.n_locations
    c_set = {tuple(x) for x in history.container_reads.tolist()}
    o_set = {tuple(x) for x in history.object_reads.tolist()}
    total = 0.0
    for c in range(history.n_containers):
        tags = [(c, c_set, history.container_scope(c))]
        tags += [(int(o), o_set, history.object_scope(int(o))) for o in containment.members(c)]
        for t in range(history.t_begin, history.t_end + 1):
            marginal = 0.0
            for a in range(R):
                p = 1.0 / R
                for tag, reads, scope in tags:
                    if not any(s <= t <= e for s, e in scope):
                        continue
                    for r in range(R):
                        p *= rates.pi[r, a] if (t, r, tag) in reads else 1.0 - rates.pi[r, a]
                marginal += p
            total += math.log(marginal)
    return total


def all_containments(n_objects, n_containers):
    for assignment in itertools.product(range(-1, n_containers), repeat=n_objects):
        yield ContainmentMap(np.array(assignment, dtype=np.int64), n_containers)


def random_instance(rng):
    R = int(rng.integers(1, 3))
    C = int(rng.integers(1, 3))
    O = int(rng.integers(1, 4))
    T = int(rng.integers(1, 5))
    pi = rng.uniform(0.05, 0.95, size=(R, R))
    rates = ReadRateTable(pi)
    truth = ContainmentMap(rng.integers(0, C, size=O), C)
    history, _ = sample_trace(rates, truth, T, int(rng.integers(1 << 30)))
    return history, rates


# ---------------------------------------------------------------------------
# Tags
# ---------------------------------------------------------------------------

def test_external_ids_carry_kind_bit():
    tag = external_id(TagKind.CONTAINER, 5)
    assert parse_external(tag).kind is TagKind.CONTAINER
    assert parse_external(tag).id == 5
    assert parse_external(external_id(TagKind.OBJECT, 5)).kind is TagKind.OBJECT


def test_tag_index_interns_densely_per_kind():
    index = TagIndex()
    a = index.intern(1000)
    b = index.intern(external_id(TagKind.CONTAINER, 77))
    c = index.intern(2000)
    assert (a.id, b.id, c.id) == (0, 0, 1)
    assert index.intern(1000) == a
    assert index.external(TagKind.OBJECT, 1) == 2000
    assert index.count(TagKind.CONTAINER) == 1


# ---------------------------------------------------------------------------
# Read rates and intervals
# ---------------------------------------------------------------------------

def test_rates_are_clamped():
    rates = ReadRateTable(np.array([[1.0, 0.0], [0.0, 1.0]]), clamp_eps=1e-3)
    assert rates.pi.max() == pytest.approx(1 - 1e-3)
    assert rates.pi.min() == pytest.approx(1e-3)
    assert np.isfinite(rates.delta).all()


def test_rates_must_be_square():
    with pytest.raises(ValueError):
        ReadRateTable(np.ones((2, 3)) * 0.5)


def test_emission_log_prob():
    assert emission_log_prob(0.8, True) == pytest.approx(math.log(0.8))
    assert emission_log_prob(0.8, False) == pytest.approx(math.log(0.2))
    rates = ReadRateTable.uniform(2, 0.9, 0.05)
    assert rates.delta[0, 0] == pytest.approx(
        emission_log_prob(rates.pi[0, 0], True) - emission_log_prob(rates.pi[0, 0], False))


def test_block_diagonal_rates():
    a = ReadRateTable.uniform(2, 0.9, 0.1)
    b = ReadRateTable.uniform(3, 0.8)
    combined = ReadRateTable.block_diagonal([a, b])
    assert combined.n_locations == 5
    assert combined.pi[0, 0] == pytest.approx(0.9)
    assert combined.pi[3, 3] == pytest.approx(0.8)
    assert combined.pi[0, 3] == pytest.approx(combined.clamp_eps)


def test_interval_helpers():
    assert normalize_intervals([(5, 9), (0, 3), (4, 4), (20, 10)]) == ((0, 9),)
    assert intersect_intervals(((0, 10), (20, 30)), ((5, 25),)) == ((5, 10), (20, 25))
    inside = intervals_contain(((0, 2), (5, 6)), np.array([0, 3, 5, 7]))
    assert inside.tolist() == [True, False, True, False]
    assert not intervals_contain((), np.array([1])).any()


# ---------------------------------------------------------------------------
# Observation history
# ---------------------------------------------------------------------------

def test_history_sorts_and_dedups_reads():
    history = ObservationHistory.from_reads(0, 9, 2, 1, 2, [(3, 0, 0)],
                                            [(5, 1, 1), (2, 0, 0), (5, 1, 1), (1, 0, 1)])
    assert history.object_reads.tolist() == [[2, 0, 0], [1, 0, 1], [5, 1, 1]]
    assert history.reads_of(TagKind.OBJECT, 1).tolist() == [[1, 0, 1], [5, 1, 1]]


def test_history_rejects_out_of_range_reads():
    with pytest.raises(ValueError):
        ObservationHistory.from_reads(0, 9, 2, 1, 1, [], [(10, 0, 0)])
    with pytest.raises(ValueError):
        ObservationHistory.from_reads(0, 9, 2, 1, 1, [], [(1, 2, 0)])


def test_scopes_drop_reads_outside():
    history = ObservationHistory.from_reads(0, 9, 1, 1, 1, [], [(1, 0, 0), (6, 0, 0)],
                                            object_scopes={0: [(5, 20)]})
    assert history.object_scope(0) == ((5, 9),)
    assert history.object_reads[:, 0].tolist() == [6]
    assert history.container_scope(0) == ((0, 9),)


def test_restrict_clips_reads_and_scopes():
    history = ObservationHistory.from_reads(0, 9, 1, 1, 1, [(0, 0, 0), (8, 0, 0)], [(4, 0, 0)],
                                            object_scopes={0: [(2, 7)]})
    part = history.restrict(5, 9)
    assert part.container_reads[:, 0].tolist() == [8]
    assert len(part.object_reads) == 0
    assert part.object_scope(0) == ((5, 7),)


# ---------------------------------------------------------------------------
# Containment and ground truth
# ---------------------------------------------------------------------------

def test_containment_members_and_equality():
    cmap = ContainmentMap(np.array([1, NONE, 1, 0]), 2)
    assert cmap.members(1).tolist() == [0, 2]
    assert cmap.members(0).tolist() == [3]
    assert cmap.as_dict() == {0: 1, 2: 1, 3: 0}
    assert cmap == ContainmentMap.from_dict({0: 1, 2: 1, 3: 0}, 4, 2)
    assert cmap.with_assignment(1, 0).container_of(1) == 0


def test_containment_rejects_unknown_container():
    with pytest.raises(ValueError):
        ContainmentMap(np.array([2]), 2)


def test_ground_truth_follows_container():
    recorder = GroundTruthRecorder(locations_per_site=5)
    recorder.container_moved(0, 0, 1)
    recorder.container_moved(10, 0, 7)
    recorder.object_contained(0, 0, 0)
    recorder.object_contained(20, 0, NONE)
    recorder.object_moved(20, 0, 3)
    recorder.change(20, 0, 0, NONE)
    truth = recorder.build()

    assert truth.object_location_at(0, 5) == 1
    assert truth.object_location_at(0, 15) == 7
    assert truth.object_site_at(0, 15) == 1
    assert truth.object_location_at(0, 25) == 3
    assert truth.container_at(0, 25) == NONE
    assert len(truth.change_points) == 1


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------

def test_empty_history_has_zero_likelihood():
    history = ObservationHistory.from_reads(5, 4, 2, 1, 1)
    assert log_likelihood(history, ContainmentMap.empty(1, 1), ReadRateTable.uniform(2, 0.8)) == 0.0


def test_likelihood_matches_enumeration():
    """Every containment of every tiny instance agrees with brute force"""
    rng = np.random.default_rng(11)
    for _ in range(60):
        history, rates = random_instance(rng)
        for cmap in all_containments(history.n_objects, history.n_containers):
            expected = brute_log_likelihood(history, cmap, rates)
            assert log_likelihood(history, cmap, rates) == pytest.approx(expected, abs=1e-9)


def test_likelihood_respects_scopes():
    rates = ReadRateTable(np.array([[0.7, 0.2], [0.1, 0.6]]))
    history = ObservationHistory.from_reads(
        0, 3, 2, 1, 2, [(0, 0, 0), (2, 1, 0)], [(1, 0, 0), (3, 1, 1), (0, 1, 1)],
        object_scopes={0: [(1, 2)], 1: [(3, 3)]})
    cmap = ContainmentMap(np.array([0, 0]), 1)
    assert log_likelihood(history, cmap, rates) == pytest.approx(
        brute_log_likelihood(history, cmap, rates), abs=1e-9)


def test_sample_trace_is_seeded():
    rates = ReadRateTable.uniform(3, 0.8, 0.1)
    cmap = ContainmentMap(np.array([0, 0, 1]), 2)
    a, truth = sample_trace(rates, cmap, 20, seed=5)
    b, _ = sample_trace(rates, cmap, 20, seed=5)
    assert np.array_equal(a.object_reads, b.object_reads)
    assert truth.container_at(2, 0) == 1
