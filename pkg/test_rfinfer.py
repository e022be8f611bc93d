#!/usr/bin/env python3
"""
Tests for RFINFER: candidates, E-step posteriors, M-step weights and the EM loop
"""

import itertools
import math

import numpy as np
import pytest

from core_model import NONE, ContainmentMap, ObservationHistory, ReadRateTable, log_likelihood, sample_trace
from rfinfer import (
    RFInfer,
    admit,
    build_candidates,
    e_step,
    initial_containment,
    m_step_assign,
    m_step_weights,
    run_em,
)


def random_rates(rng, R):
    pi = rng.uniform(0.02, 0.3, size=(R, R))
    np.fill_diagonal(pi, rng.uniform(0.6, 0.95, size=R))
    return ReadRateTable(pi)


def random_instance(seed, R=3, C=3, O=6, T=20):
    rng = np.random.default_rng(seed)
    rates = random_rates(rng, R)
    truth = ContainmentMap(rng.integers(0, C, size=O), C)
    history, _ = sample_trace(rates, truth, T, seed)
    return history, rates, truth


def read_log_prob(history, rates, kind_reads, tag, t, a):
    reads = {(int(x[0]), int(x[1])) for x in kind_reads if x[2] == tag}
    return sum(math.log(rates.pi[r, a]) if (t, r) in reads else math.log(1 - rates.pi[r, a])
               for r in range(history.n_locations))


def brute_posterior(history, rates, containment, c, t):
    R = history.n_locations
    tags = [(history.container_reads, c, history.container_scope(c))]
    tags += [(history.object_reads, int(o), history.object_scope(int(o))) for o in containment.members(c)]
    logp = np.full(R, -math.log(R))
    for a in range(R):
        for reads, tag, scope in tags:
            if any(s <= t <= e for s, e in scope):
                logp[a] += read_log_prob(history, rates, reads, tag, t, a)
    q = np.exp(logp - logp.max())
    return q / q.sum()


def brute_weight(history, rates, containment, c, o):
    total = 0.0
    for s, e in history.object_scope(o):
        for t in range(s, e + 1):
            q = brute_posterior(history, rates, containment, c, t)
            total += sum(q[a] * read_log_prob(history, rates, history.object_reads, o, t, a)
                         for a in range(history.n_locations))
    return total


# ---------------------------------------------------------------------------
# Candidates
# ---------------------------------------------------------------------------

def test_initial_containment_picks_most_colocated():
    # object 0 shares reader 1 with container 1 twice and container 0 once
    history = ObservationHistory.from_reads(
        0, 4, 2, 2, 2,
        container_reads=[(0, 1, 0), (1, 1, 1), (2, 1, 1)],
        object_reads=[(0, 1, 0), (1, 1, 0), (2, 1, 0)])
    cmap = initial_containment(history)
    assert cmap.container_of(0) == 1
    assert cmap.container_of(1) == NONE


def test_build_candidates_limits_to_k():
    history, _, _ = random_instance(1, R=2, C=3, O=4, T=30)
    candidates = build_candidates(history, first_window=60, recent_window=30, k=2)
    assert candidates
    assert all(1 <= len(c) <= 2 for c in candidates.values())


def test_build_candidates_rejects_bad_k():
    history, _, _ = random_instance(2)
    with pytest.raises(ValueError):
        build_candidates(history, 60, 60, 0)


def test_admit_adds_current_container():
    candidates = {0: np.array([1])}
    out = admit(candidates, {0: 2, 1: 0, 2: NONE})
    assert out[0].tolist() == [1, 2]
    assert out[1].tolist() == [0]
    assert 2 not in out


# ---------------------------------------------------------------------------
# E-step and M-step against brute force
# ---------------------------------------------------------------------------

def test_posterior_matches_brute_force():
    history, rates, truth = random_instance(3, R=2, C=2, O=3, T=5)
    posterior = e_step(history, truth, rates)
    for c in range(history.n_containers):
        for t in range(history.t_begin, history.t_end + 1):
            assert np.allclose(posterior.distribution(t, c),
                               brute_posterior(history, rates, truth, c, t), atol=1e-9)


def test_weights_match_brute_force():
    history, rates, truth = random_instance(4, R=2, C=2, O=3, T=5)
    posterior = e_step(history, truth, rates)
    candidates = {o: np.array([0, 1]) for o in range(history.n_objects)}
    weights = m_step_weights(history, posterior, candidates, rates)
    for c, o, w in weights.pairs():
        assert w == pytest.approx(brute_weight(history, rates, truth, c, o), abs=1e-9)


def test_posterior_likelihood_matches_model():
    history, rates, truth = random_instance(5)
    assert e_step(history, truth, rates).log_likelihood == pytest.approx(
        log_likelihood(history, truth, rates))


def test_assign_breaks_ties_to_smallest_container():
    history, rates, truth = random_instance(6, C=3, O=2)
    weights = m_step_weights(history, e_step(history, truth, rates), {0: np.array([2, 1])}, rates)
    weights.weights[0] = {1: -3.0, 2: -3.0}
    assert m_step_assign(weights).container_of(0) == 1
    assert m_step_assign(weights).container_of(1) == NONE


# ---------------------------------------------------------------------------
# EM loop
# ---------------------------------------------------------------------------

def assert_monotone(trace):
    trace = np.array(trace)
    assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[:-1]).clip(min=1.0))


@pytest.mark.parametrize('seed', range(10))
def test_likelihood_never_decreases(seed):
    history, rates, _ = random_instance(seed)
    result = run_em(history, rates, max_iters=50)
    assert_monotone(result.log_likelihood_trace)
    assert result.final_log_likelihood == pytest.approx(
        log_likelihood(history, result.containment, rates))


def test_likelihood_never_decreases_on_many_small_instances():
    for seed in range(1000):
        history, rates, _ = random_instance(seed, R=2, C=2, O=3, T=6)
        assert_monotone(run_em(history, rates).log_likelihood_trace)


def assert_local_maximum(history, rates, containment, eligible):
    best = log_likelihood(history, containment, rates)
    for o in range(history.n_objects):
        current = containment.container_of(o)
        if current == NONE:
            continue
        for c in eligible(o):
            if c != current:
                moved = containment.with_assignment(o, int(c))
                assert log_likelihood(history, moved, rates) <= best + 1e-9, (o, int(c))


SMALL_SHAPES = [(2, 2, 3, 4), (2, 2, 2, 3), (2, 1, 3, 4), (2, 2, 1, 4), (2, 2, 3, 2)]


@pytest.mark.parametrize('seed', range(300))
def test_result_is_a_local_maximum_over_all_containers(seed):
    R, C, O, T = SMALL_SHAPES[seed % len(SMALL_SHAPES)]
    history, rates, _ = random_instance(seed, R=R, C=C, O=O, T=T)
    everything = {o: np.arange(C) for o in range(O)}
    result = run_em(history, rates, candidates=everything)
    assert_local_maximum(history, rates, result.containment, lambda o: range(C))


@pytest.mark.parametrize('seed', range(100))
def test_result_is_a_local_maximum_over_candidates(seed):
    history, rates, _ = random_instance(seed, R=2, C=2, O=3, T=4)
    result = run_em(history, rates)
    assert_local_maximum(history, rates, result.containment,
                         lambda o: result.candidates.get(o, []))


def test_climb_accepts_only_improving_moves():
    history, rates, _ = random_instance(10, R=2, C=2, O=3, T=4)
    engine = RFInfer(history, rates)
    start = ContainmentMap(np.zeros(3, dtype=np.int64), 2)
    climbed, moves = engine.climb(start, {o: np.arange(2) for o in range(3)})
    assert log_likelihood(history, climbed, rates) >= log_likelihood(history, start, rates)
    again, more = engine.climb(climbed, {o: np.arange(2) for o in range(3)})
    assert more == 0
    assert again == climbed
    if moves == 0:
        assert climbed == start


@pytest.mark.parametrize('seed', range(5))
def test_converged_result_is_a_fixed_point(seed):
    history, rates, _ = random_instance(100 + seed)
    result = run_em(history, rates, max_iters=50)
    assert result.converged
    weights = m_step_weights(history, result.posterior, result.candidates, rates)
    assert m_step_assign(weights) == result.containment


def test_result_bounded_by_exhaustive_best():
    history, rates, _ = random_instance(7, R=2, C=2, O=4, T=15)
    result = run_em(history, rates)
    best = max(log_likelihood(history, ContainmentMap(np.array(a), 2), rates)
               for a in itertools.product(range(-1, 2), repeat=4))
    assert result.final_log_likelihood <= best + 1e-9
    assert result.final_log_likelihood >= log_likelihood(history, initial_containment(history), rates) - 1e-9


def test_recovers_containment_on_clean_trace():
    rates = ReadRateTable.uniform(4, 0.95, 0.02)
    truth = ContainmentMap(np.array([0, 0, 1, 1, 2, 2]), 3)
    history, _ = sample_trace(rates, truth, 20, seed=8)
    result = run_em(history, rates)
    assert result.containment == truth


def test_memoization_does_not_change_the_result():
    history, rates, _ = random_instance(9)
    cached = RFInfer(history, rates, memoize=True).run()
    fresh = RFInfer(history, rates, memoize=False).run()
    assert cached.containment == fresh.containment
    assert cached.log_likelihood_trace == fresh.log_likelihood_trace
    assert cached.weights.weights == fresh.weights.weights


def test_max_iters_must_be_positive():
    history, rates, _ = random_instance(10)
    with pytest.raises(ValueError):
        run_em(history, rates, max_iters=0)


def test_object_location_follows_container():
    rates = ReadRateTable.uniform(4, 0.95, 0.02)
    truth = ContainmentMap(np.array([0, 0, 1, 1]), 2)
    history, ground = sample_trace(rates, truth, 20, seed=11)
    result = run_em(history, rates)
    location, confident = result.object_location(0, 19)
    assert confident
    assert location == ground.object_location_at(0, 19)
    rows = list(result.event_rows(19))
    assert [r[1] for r in rows] == [0, 1, 2, 3]
    assert result.object_track(2, np.array([19]))[0] == ground.object_location_at(2, 19)


def test_unassigned_object_is_located_by_its_own_reads():
    history = ObservationHistory.from_reads(0, 4, 3, 1, 1, container_reads=[(0, 0, 0)],
                                            object_reads=[(3, 2, 0)])
    result = run_em(history, ReadRateTable.uniform(3, 0.9, 0.05))
    assert result.containment.container_of(0) == NONE
    assert result.object_location(0, 4) == (2, False)
    assert result.object_location(0, 1) == (NONE, False)
