#!/usr/bin/env python3
"""
Tests for GLR change detection and offline threshold calibration
"""

import numpy as np
import pytest

from changepoint import (
    ChangePointReport,
    Threshold,
    Watermark,
    calibrate_threshold,
    delta_statistic,
    detect,
    neighborhood,
    reports_to_rows,
)
from core_model import ContainmentMap, ReadRateTable, sample_trace
from rfinfer import EvidenceSeries, RFInfer, e_step, m_step_weights, point_evidence


def switch_series(before=20, after=20, t0=0):
    """Evidence that clearly favors container 0, then container 1"""
    e = np.array([[0.0, -5.0]] * before + [[-5.0, 0.0]] * after)
    times = np.arange(t0, t0 + before + after)
    return EvidenceSeries(0, np.array([0, 1]), times, e, times.copy())


def test_statistic_locates_the_switch():
    series = switch_series()
    delta, t_change, (old, new) = delta_statistic(series, (1, 39))
    assert delta == pytest.approx(100.0)
    assert t_change == 20
    assert (old, new) == (0, 1)


def test_statistic_on_stable_evidence_is_zero():
    times = np.arange(30)
    series = EvidenceSeries(0, np.array([0, 1]), times, np.tile([0.0, -2.0], (30, 1)), times)
    delta, _, (old, new) = delta_statistic(series, (1, 29))
    assert delta == 0.0
    assert old == new == 0


def test_statistic_needs_two_epochs():
    series = EvidenceSeries(0, np.array([0]), np.array([5]), np.zeros((1, 1)), np.array([5]))
    assert delta_statistic(series, (5, 5)) is None


def test_statistic_respects_scope_gaps():
    e = np.array([[0.0, -5.0]] * 10 + [[-5.0, 0.0]] * 10)
    times = np.concatenate([np.arange(0, 10), np.arange(50, 60)])
    series = EvidenceSeries(0, np.array([3, 7]), times, e, times)
    delta, t_change, (old, new) = delta_statistic(series, (1, 59))
    assert t_change == 50
    assert (old, new) == (3, 7)
    assert delta == pytest.approx(50.0)


def test_detect_reports_once_and_advances_watermark():
    watermarks = {}
    series = switch_series()
    reports = detect({0: series}, Threshold(10.0), watermarks, recent_window=40)
    assert reports == [ChangePointReport(0, 20, pytest.approx(100.0), 1, 0)]
    assert watermarks[0].consumed == 20
    assert watermarks[0].evaluated == 39

    # same data again: nothing new to evaluate
    assert detect({0: series}, Threshold(10.0), watermarks, recent_window=40) == []

    # more data for the new container: no second change
    longer = switch_series(before=20, after=40)
    assert detect({0: longer}, Threshold(10.0), watermarks, recent_window=40) == []
    assert watermarks[0].evaluated == 59


def test_detect_below_threshold_is_silent():
    watermarks = {}
    assert detect({0: switch_series()}, Threshold(500.0), watermarks, recent_window=40) == []
    assert watermarks[0].consumed == 0


def test_detect_waits_for_enough_reads():
    series = switch_series()
    sparse = EvidenceSeries(0, series.candidates, series.times, series.e, np.array([3, 30]))
    assert detect({0: sparse}, Threshold(1.0), {}, recent_window=40, min_epochs=5) == []


def test_detect_limits_split_to_recent_window():
    # the switch at 20 is outside the last 10 epochs
    reports = detect({0: switch_series(after=30)}, Threshold(1.0), {0: Watermark(0)}, recent_window=10)
    assert reports == []


def test_threshold_must_be_non_negative():
    with pytest.raises(ValueError):
        Threshold(-1.0)


def test_neighborhood_centers_on_confusable_readers():
    pi = np.full((4, 4), 1e-6)
    np.fill_diagonal(pi, 0.8)
    pi[1, 2] = pi[2, 1] = pi[1, 3] = 0.3
    assert neighborhood(ReadRateTable(pi)).tolist() == [1, 2, 3]


def test_calibration_is_seeded():
    rates = ReadRateTable.uniform(4, 0.8, 0.1)
    a = calibrate_threshold(rates, horizon=30, n_samples=9, seed=1)
    b = calibrate_threshold(rates, horizon=30, n_samples=9, seed=1)
    assert a.delta == b.delta
    assert a.delta >= 0.0
    assert (a.n_samples, a.horizon, a.seed) == (9, 30, 1)


def test_calibration_rejects_empty_sample():
    with pytest.raises(ValueError):
        calibrate_threshold(ReadRateTable.uniform(3, 0.8), 30, 0, 0)


def test_reports_to_rows():
    rows = list(reports_to_rows([ChangePointReport(4, 17, 3.5, 2, 1)]))
    assert rows == [(4, 17, 3.5, 2)]


def test_calibration_on_noiseless_rates_is_zero():
    rates = ReadRateTable.uniform(3, 1.0, 0.0)
    threshold = calibrate_threshold(rates, horizon=20, n_samples=9, seed=0, use_neighborhood=False)
    assert threshold.delta == 0.0


@pytest.mark.parametrize('seed', range(5))
def test_statistic_matches_likelihoods_recomputed_from_scratch(seed):
    rates = ReadRateTable.uniform(3, 0.8, 0.1)
    truth = ContainmentMap(np.array([0, 1, 0]), 2)
    history, _ = sample_trace(rates, truth, 12, seed=seed)
    candidates = np.array([0, 1])
    engine = RFInfer(history, rates, memoize=False)
    series = point_evidence(engine.tables, engine.e_step(truth), 0, candidates)

    def weights(lo, hi):
        part = history.restrict(lo, hi)
        return m_step_weights(part, e_step(part, truth, rates), {0: candidates}, rates).weights[0]

    for s in range(1, 13):
        prefix = weights(0, s - 1)
        for j, c in enumerate(candidates):
            assert series.cumulative[s - 1, j] == pytest.approx(prefix[int(c)], abs=1e-9)

    def strength(lo, hi):
        return max(weights(lo, hi).values())

    whole = strength(0, 11)
    gains = {s: strength(0, s - 1) + strength(s, 11) - whole for s in range(1, 12)}
    delta, t_change, _ = delta_statistic(series, (1, 11))
    assert delta == pytest.approx(max(0.0, max(gains.values())), abs=1e-9)
    if delta > 0.0:
        assert gains[t_change] == pytest.approx(delta, abs=1e-9)
