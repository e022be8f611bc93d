#!/usr/bin/env python3
"""
Tests for the SMURF* comparison baseline
"""

import numpy as np
import pandas as pd
import pytest

from baseline_smurf import (
    AdaptiveWindow,
    SmurfSettings,
    SmurfState,
    colocation_events,
    infer_containment_smurf,
    run_smurf,
    smooth_location,
)
from config_loader import Config
from core_model import NONE, ObservationHistory
from simulator import SupplyChainConfig, generate


def switching_state():
    """Object 0 co-located with container 0 for t < 50, container 1 afterwards"""
    events = pd.DataFrame({'t': np.arange(100), 'o': 0, 'c': np.where(np.arange(100) < 50, 0, 1)})
    return SmurfState(events, n_objects=2)


def test_window_length_from_read_probability():
    window = AdaptiveWindow(delta_s=0.05, estimation_window=60)
    assert window.length(1.0) == 3
    assert window.length(0.0) == 60
    assert window.length(0.01) == 60
    assert window.lengths(np.array([1.0, 0.0, 0.5])).tolist() == [3, 60, 6]


def test_read_probability_is_trailing_mean():
    window = AdaptiveWindow(0.05, 4)
    p = window.read_probability(np.array([1, 0, 0, 0, 0, 1], dtype=bool))
    assert p.tolist() == pytest.approx([1.0, 0.5, 1 / 3, 0.25, 0.0, 0.25])


def test_smoothing_fills_between_reads():
    window = AdaptiveWindow(0.05, 60)
    located = smooth_location(np.array([0, 1, 2]), np.array([1, 1, 1]), 0, 2, 3, window)
    assert located.tolist() == [1, 1, 1]
    unseen = smooth_location(np.array([0]), np.array([2]), 50, 59, 3, window)
    assert (unseen == NONE).all()


def test_colocation_events():
    history = ObservationHistory.from_reads(
        0, 9, 2, 2, 1, container_reads=[(3, 0, 0), (3, 1, 1), (4, 1, 1)],
        object_reads=[(3, 1, 0), (4, 1, 0), (5, 0, 0)])
    events = colocation_events(history)
    assert events[['t', 'o', 'c']].values.tolist() == [[3, 0, 1], [4, 0, 1]]


def test_disjoint_top_k_reports_change():
    state = switching_state()
    assert infer_containment_smurf(state, 0, 50, 99, k=1, history=50) == (1, True)
    assert infer_containment_smurf(state, 0, 30, 99, k=2, history=50) == (0, False)
    assert infer_containment_smurf(state, 0, 20, 40, k=3, history=50) == (0, False)


def test_unseen_object_has_no_container():
    assert infer_containment_smurf(switching_state(), 1, 50, 99, k=3, history=50) == (NONE, False)


def test_k_must_be_positive():
    with pytest.raises(ValueError):
        infer_containment_smurf(switching_state(), 0, 50, 99, k=0, history=50)


def test_counts_break_ties_by_container_id():
    events = pd.DataFrame({'t': [0, 1, 2, 3], 'o': 0, 'c': [5, 2, 5, 2]})
    state = SmurfState(events, 1)
    assert state.counts(0, 0, 3) == [(2, 2), (5, 2)]
    assert state.top_k(0, 0, 3, 1) == [2]


def test_settings_from_config():
    settings = SmurfSettings.from_config(Config.from_dict({'smurf': {'k': 2}}))
    assert settings.k == 2
    assert settings.batch_period == 300
    assert settings.window == AdaptiveWindow(0.05, 60)


def test_run_over_simulated_trace():
    bundle = generate(SupplyChainConfig(
        warehouses=2, duration=400, max_pallets=2, cases_per_pallet=2, items_per_case=3,
        shelves=4, shelf_dwell=100, transit=20, seed=5))
    run = run_smurf(bundle, SmurfSettings(batch_period=100, history=200))
    estimates = run.estimates()
    assert list(estimates.columns) == ['t', 'site', 'object', 'container', 'location', 'confident']
    assert len(estimates) > 0
    assert set(estimates['t']) <= {99, 199, 299, 399}
    located = estimates[estimates['confident']]
    R = bundle.locations_per_site
    assert (located['location'] // R == located['site']).all()
    assert run.max_batch_wall_time >= 0.0


def test_constant_colocation_never_reports_a_change():
    events = pd.DataFrame({'t': np.arange(0, 200, 3), 'o': 0, 'c': 4})
    state = SmurfState(events, n_objects=1)
    for k in (1, 2, 3):
        for t in range(0, 200, 7):
            container, changed = infer_containment_smurf(state, 0, t, 199, k=k, history=60)
            assert not changed
            assert container == 4
