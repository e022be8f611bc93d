#!/usr/bin/env python3
"""
SMURF*: adaptive-window smoothing with co-location heuristics

The comparison baseline. Each tag's location is smoothed on its own with a
window just long enough that a present tag is read at least once with high
confidence. Containment is the most frequently co-located case, and a change
is reported when the top-k co-located cases before and after a candidate epoch
do not overlap.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from changepoint import ChangePointReport
from config_loader import Config
from core_model import NONE, ObservationHistory
from distrib import batch_schedule
from simulator import TraceBundle

logger = logging.getLogger('rftrack.smurf')


@dataclass(frozen=True)
class AdaptiveWindow:
    """Window sizing from the tag's recent read probability"""
    delta_s: float = 0.05
    estimation_window: int = 60

    def length(self, p_hat: float) -> int:
        if p_hat <= 0:
            return self.estimation_window
        return max(1, min(self.estimation_window, math.ceil(math.log(1 / self.delta_s) / min(p_hat, 1.0))))

    def lengths(self, p_hat: np.ndarray) -> np.ndarray:
        p_hat = np.minimum(np.asarray(p_hat, dtype=float), 1.0)
        with np.errstate(divide='ignore'):
            raw = np.ceil(np.log(1 / self.delta_s) / p_hat)
        return np.where(p_hat > 0, np.clip(raw, 1, self.estimation_window), self.estimation_window).astype(np.int64)

    def read_probability(self, read: np.ndarray) -> np.ndarray:
        """p_hat per epoch: fraction of read epochs in the trailing estimation window"""
        return pd.Series(read.astype(float)).rolling(self.estimation_window, min_periods=1).mean().to_numpy()


def smooth_location(times: np.ndarray, readers: np.ndarray, t_begin: int, t_end: int,
                    n_locations: int, window: AdaptiveWindow) -> np.ndarray:
    """Majority reader inside each epoch's adaptive window; NONE where the window saw nothing.

    Windows are centred on the epoch and clipped to [t_begin, t_end].
    """
    n = t_end - t_begin + 1
    if n <= 0:
        return np.empty(0, dtype=np.int64)
    times = np.asarray(times, dtype=np.int64)
    readers = np.asarray(readers, dtype=np.int64)
    keep = (times >= t_begin) & (times <= t_end)
    times, readers = times[keep], readers[keep]

    counts = np.zeros((n + 1, n_locations), dtype=np.int64)
    np.add.at(counts, (times - t_begin + 1, readers), 1)
    cumulative = np.cumsum(counts, axis=0)

    read = np.zeros(n, dtype=bool)
    read[times - t_begin] = True
    lengths = window.lengths(window.read_probability(read))
    idx = np.arange(n)
    lo = np.clip(idx - lengths // 2, 0, n)
    hi = np.clip(idx + lengths - lengths // 2, 0, n)
    in_window = cumulative[hi] - cumulative[lo]
    best = np.argmax(in_window, axis=1)
    return np.where(in_window.max(axis=1) > 0, best, NONE)


def colocation_events(history: ObservationHistory) -> pd.DataFrame:
    """(t, o, c) for every object and container read by the same reader in the same epoch"""
    obj, cont = history.object_reads, history.container_reads
    objects = pd.DataFrame({'key': obj[:, 0] * history.n_locations + obj[:, 1], 't': obj[:, 0], 'o': obj[:, 2]})
    containers = pd.DataFrame({'key': cont[:, 0] * history.n_locations + cont[:, 1], 'c': cont[:, 2]})
    pairs = objects.merge(containers, on='key')[['t', 'o', 'c']].drop_duplicates()
    return pairs.sort_values(['o', 't', 'c'], kind='stable').reset_index(drop=True)


class SmurfState:
    """Per-object co-location events, queried by time range"""

    def __init__(self, events: pd.DataFrame, n_objects: int):
        self.times = events['t'].to_numpy(dtype=np.int64)
        self.containers = events['c'].to_numpy(dtype=np.int64)
        objects = events['o'].to_numpy(dtype=np.int64)
        self.ptr = np.searchsorted(objects, np.arange(n_objects + 1))

    def counts(self, o: int, t_lo: int, t_hi: int) -> List[Tuple[int, int]]:
        """(container, count) in [t_lo, t_hi], most frequent first, ties to the smallest id"""
        lo, hi = self.ptr[o], self.ptr[o + 1]
        times = self.times[lo:hi]
        a, b = np.searchsorted(times, [t_lo, t_hi + 1])
        if b <= a:
            return []
        ids, n = np.unique(self.containers[lo + a:lo + b], return_counts=True)
        order = np.lexsort((ids, -n))
        return [(int(ids[i]), int(n[i])) for i in order]

    def top_k(self, o: int, t_lo: int, t_hi: int, k: int) -> List[int]:
        return [c for c, _ in self.counts(o, t_lo, t_hi)[:k]]


def infer_containment_smurf(state: SmurfState, o: int, t: int, now: int, k: int,
                            history: int) -> Tuple[int, bool]:
    """(container, changed) for object o, probing a change at epoch t"""
    if k < 1:
        raise ValueError("k must be >= 1")
    before = state.counts(o, t - history, t - 1)
    after = state.counts(o, t, now)
    if not before and not after:
        return NONE, False
    if not before or not after:
        return (before or after)[0][0], False
    top_before = [c for c, _ in before[:k]]
    top_after = [c for c, _ in after[:k]]
    if top_before[0] == top_after[0]:
        return top_before[0], False
    shared = set(top_before) & set(top_after)
    if not shared:
        return top_after[0], True
    combined = dict(before)
    for c, n in after:
        combined[c] = combined.get(c, 0) + n
    return min(shared, key=lambda c: (-combined[c], c)), False


@dataclass(frozen=True)
class SmurfSettings:
    k: int = 3
    delta_s: float = 0.05
    estimation_window: int = 60
    history: int = 600
    scan_step: int = 30
    min_after: int = 30
    batch_period: int = 300

    @classmethod
    def from_config(cls, config: Config, **overrides) -> 'SmurfSettings':
        values = {key: config.get('smurf', key) for key in
                  ('k', 'delta_s', 'estimation_window', 'history', 'scan_step', 'min_after')}
        values['batch_period'] = config.get('inference', 'batch_period')
        values.update(overrides)
        return cls(**values)

    @property
    def window(self) -> AdaptiveWindow:
        return AdaptiveWindow(self.delta_s, self.estimation_window)


class SmurfSite:
    """SMURF* over one site's readings, evaluated at batch ends"""

    def __init__(self, site: int, history: ObservationHistory, settings: SmurfSettings,
                 location_offset: int = 0):
        self.site = site
        self.history = history
        self.settings = settings
        self.location_offset = location_offset
        self.state = SmurfState(colocation_events(history), history.n_objects)
        reads = history.object_reads
        self.ptr = np.searchsorted(reads[:, 2], np.arange(history.n_objects + 1))
        self.consumed: Dict[int, int] = {}
        self.reports: List[ChangePointReport] = []
        self.rows: List[Tuple[int, int, int, int, int, bool]] = []
        self.wall_time_s: List[float] = []

    def _reads(self, o: int) -> np.ndarray:
        return self.history.object_reads[self.ptr[o]:self.ptr[o + 1]]

    def run_batch(self, now: int, previous: int):
        started = time.time()
        s = self.settings
        for o in range(self.history.n_objects):
            reads = self._reads(o)
            seen = reads[reads[:, 0] <= now]
            if len(seen) == 0 or seen[-1, 0] < now - s.history:
                continue
            consumed = self.consumed.get(o, int(seen[0, 0]))
            first_scan = max(consumed + 1, previous + 1 - s.min_after, now - s.history + 1)
            for t in range(first_scan, now - s.min_after + 1, s.scan_step):
                container, changed = infer_containment_smurf(self.state, o, t, now, s.k, s.history)
                if changed:
                    old = self.state.top_k(o, t - s.history, t - 1, 1)
                    self.reports.append(ChangePointReport(o, t, 0.0, container, old[0] if old else NONE))
                    consumed = t
                    break
            self.consumed[o] = consumed

            top = self.state.top_k(o, max(consumed, now - s.history + 1), now, 1)
            container = top[0] if top else NONE
            t_lo = max(0, now - 2 * s.estimation_window)
            smoothed = smooth_location(seen[:, 0], seen[:, 1], t_lo, now, self.history.n_locations, s.window)
            location = int(smoothed[-1]) if len(smoothed) else NONE
            if location != NONE:
                location += self.location_offset
            self.rows.append((now, self.site, o, container, location, location != NONE))
        self.wall_time_s.append(time.time() - started)


@dataclass
class SmurfRun:
    sites: List[SmurfSite]
    wall_time_s: float

    @property
    def reports(self) -> List[ChangePointReport]:
        return sorted((r for site in self.sites for r in site.reports), key=lambda r: (r.t_change, r.object))

    @property
    def max_batch_wall_time(self) -> float:
        return max((w for site in self.sites for w in site.wall_time_s), default=0.0)

    def estimates(self) -> pd.DataFrame:
        rows = [row for site in self.sites for row in site.rows]
        return pd.DataFrame(rows, columns=['t', 'site', 'object', 'container', 'location', 'confident'])


def run_smurf(bundle: TraceBundle, settings: SmurfSettings,
              schedule: Optional[List[int]] = None) -> SmurfRun:
    """SMURF* at every site on the same batch schedule as the inference pipeline"""
    started = time.time()
    schedule = schedule or batch_schedule(bundle.duration, settings.batch_period)
    R = bundle.locations_per_site
    sites = [SmurfSite(s, h, settings, s * R) for s, h in enumerate(bundle.histories)]
    previous = -1
    for now in schedule:
        for site in sites:
            site.run_batch(now, previous)
        previous = now
    run = SmurfRun(sites, time.time() - started)
    logger.info(f"SMURF* finished {len(schedule)} batches: {len(run.reports)} changes reported")
    return run
