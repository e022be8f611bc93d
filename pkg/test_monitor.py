#!/usr/bin/env python3
"""
Tests for the exposure automaton and centroid-shared query state
"""

import numpy as np
import pandas as pd
import pytest

from core_model import NONE
from monitor import (
    STATE_HEADER,
    Alert,
    Automaton,
    ExposureMonitor,
    ObjectQueryState,
    SharedStateBlock,
    StateDecodeError,
    byte_distance,
    decode_delta,
    encode_delta,
    precision_recall_f,
    run_monitor,
    score_alerts,
    share,
    step,
    unshare,
)
from simulator import TemperatureStream

# location 0 is warm, location 1 is a freezer shelf
TEMPS = TemperatureStream(np.array([5.0, -5.0]))


def test_step_alerts_once_per_episode():
    monitor = ExposureMonitor('q2', threshold_temp=0.0, duration=3)
    state = ObjectQueryState(7)
    fired = []
    for t, loc in enumerate([0, 0, 0, 0, 1, 0, 0, 0]):
        state, alert = step(state, (t, 7, loc, NONE), TEMPS, monitor)
        if alert:
            fired.append(alert)
    assert [a.t_alert for a in fired] == [2, 7]
    assert fired[0].temps == (5.0, 5.0, 5.0)
    assert state.state == Automaton.ALERTED


def test_q1_ignores_freezer_containers():
    monitor = ExposureMonitor('q1', 0.0, 2, container_types={3: 'freezer', 4: 'case'})
    assert not monitor.condition(0, 3, 5.0)
    assert monitor.condition(0, 4, 5.0)
    assert monitor.condition(0, NONE, 5.0)
    assert not monitor.condition(0, 4, None)
    assert ExposureMonitor('q2', 0.0, 2, {3: 'freezer'}).condition(0, 3, 5.0)


def test_missing_temperature_counts_as_a_gap():
    monitor = ExposureMonitor('q2', 0.0, 5)
    state, alert = step(ObjectQueryState(1), (0, 1, NONE, NONE), TEMPS, monitor)
    assert alert is None
    assert monitor.data_gaps == 1


@pytest.mark.parametrize('seed', range(5))
def test_advance_matches_step(seed):
    rng = np.random.default_rng(seed)
    n = 300
    locations = rng.choice([0, 0, 0, 1, NONE], size=n)
    containers = rng.choice([0, 1], size=n)
    types = {1: 'freezer'}

    stepped = ExposureMonitor('q1', 0.0, 4, types)
    state = ObjectQueryState(9)
    expected = []
    for t in range(n):
        state, alert = step(state, (t, 9, int(locations[t]), int(containers[t])), TEMPS, stepped)
        if alert:
            expected.append(alert)

    # feed the same stream in uneven chunks
    advanced = ExposureMonitor('q1', 0.0, 4, types)
    chunked = ObjectQueryState(9)
    alerts = []
    cuts = np.sort(rng.choice(np.arange(1, n), size=6, replace=False))
    for lo, hi in zip(np.concatenate([[0], cuts]), np.concatenate([cuts, [n]])):
        times = np.arange(lo, hi)
        alerts.extend(advanced.advance(chunked, times, locations[lo:hi], containers[lo:hi], TEMPS))

    assert alerts == expected
    assert chunked == state
    assert advanced.data_gaps == stepped.data_gaps


def test_run_monitor_holds_last_event():
    events = pd.DataFrame({'time': [0, 5, 0], 'tag_id': [7, 7, 8],
                           'location': [0, 1, 1], 'container': [NONE, NONE, NONE]})
    alerts, states = run_monitor(events, TEMPS, ExposureMonitor('q2', 0.0, 3), t_end=9)
    assert [(a.tag_id, a.t_alert) for a in alerts] == [(7, 2)]
    assert not states[7].exposed
    assert not states[8].exposed


def test_state_image_layout():
    state = ObjectQueryState(42, Automaton.EXPOSED, 100, [1.5, 2.5])
    image = state.to_bytes()
    assert len(image) == STATE_HEADER.itemsize + 8
    assert ObjectQueryState.from_bytes(image) == state
    with pytest.raises(StateDecodeError):
        ObjectQueryState.from_bytes(image[:-1])
    with pytest.raises(StateDecodeError):
        ObjectQueryState.from_bytes(image[:5])


def random_state(rng):
    temps = rng.normal(10.0, 5.0, size=int(rng.integers(0, 20))).astype(np.float32)
    return ObjectQueryState(int(rng.integers(0, 1 << 40)), Automaton(int(rng.integers(0, 3))),
                            int(rng.integers(-1, 1_000_000)), [float(x) for x in temps])


def test_share_unshare_restores_every_state():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        states = [random_state(rng) for _ in range(10)]
        restored = unshare(share(states))
        assert restored == sorted(states, key=lambda s: s.tag_id)


def test_sharing_similar_states_saves_space():
    temps = [20.0] * 100
    states = [ObjectQueryState(1000 + i, Automaton.EXPOSED, 3600, list(temps)) for i in range(10)]
    block = share(states)
    assert block.raw_size == sum(len(s.to_bytes()) for s in states)
    assert block.raw_size >= 3 * block.size
    assert unshare(block) == states


def test_share_of_nothing():
    block = share([])
    assert block.size == 0 and block.raw_size == 0
    assert unshare(block) == []


def test_delta_round_trip_with_length_change():
    centroid = b'abcdefgh'
    target = b'abXdefghIJ'
    delta = encode_delta(5, centroid, target)
    assert decode_delta(centroid, delta) == (5, target)
    assert decode_delta(centroid, encode_delta(6, centroid, b'abc')) == (6, b'abc')
    assert byte_distance(centroid, target) == 3


def test_corrupt_deltas_are_rejected():
    centroid = ObjectQueryState(1, Automaton.EXPOSED, 0, [1.0]).to_bytes()
    target = ObjectQueryState(2, Automaton.EXPOSED, 0, [3.0]).to_bytes()
    delta = encode_delta(2, centroid, target)
    with pytest.raises(StateDecodeError):
        decode_delta(centroid, delta[:-1])
    with pytest.raises(StateDecodeError):
        decode_delta(centroid, delta + b'\x00')
    with pytest.raises(StateDecodeError):
        decode_delta(centroid, delta[:4])
    with pytest.raises(StateDecodeError):
        unshare(SharedStateBlock(centroid, {3: delta}))


def test_alert_scoring():
    truth = [Alert(1, 100, ()), Alert(2, 200, ())]
    inferred = [Alert(1, 130, ()), Alert(2, 400, ()), Alert(3, 50, ())]
    precision, recall, f = score_alerts(inferred, truth, tolerance=60)
    assert precision == pytest.approx(1 / 3)
    assert recall == pytest.approx(1 / 2)
    assert f == pytest.approx(0.4)
    assert precision_recall_f(0, 0, 0) == (1.0, 1.0, 1.0)
    assert precision_recall_f(0, 2, 0) == (0.0, 0.0, 0.0)
