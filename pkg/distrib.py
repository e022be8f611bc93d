#!/usr/bin/env python3
"""
Per-site streaming inference and the multi-site migration harness

A SiteRuntime consumes the readings of its own readers one batch at a time:
inference, change detection and history truncation run at every batch end.
When a case leaves a site, the inference state of its objects is shipped to
the next site according to the migration strategy, and the bytes are charged
to a cost ledger.
"""

import bz2
import gzip
import logging
import lzma
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Set, Tuple, Union

import numpy as np
import pandas as pd

from changepoint import ChangePointReport, Threshold, Watermark, detect
from config_loader import Config, ConfigurationError
from core_model import (
    NONE,
    ContainmentMap,
    Interval,
    ObservationHistory,
    ReadRateTable,
    intersect_intervals,
    interval_length,
    normalize_intervals,
)
from monitor import Alert, ExposureMonitor, ObjectQueryState, SharedStateBlock, decode_delta, share
from rfinfer import InferenceResult, RFInfer, admit, build_candidates, initial_containment
from simulator import Departure, TemperatureStream, TraceBundle, topological_order
from trace_io import trace_text
from truncation import CollapsedState, CriticalRegion, RecentHistory, find_critical_region, truncate

logger = logging.getLogger('rftrack.distrib')

STRATEGIES = ('centralized', 'none', 'cr')
TRUNCATION_MODES = ('full', 'cr', 'window')
CODECS = {'gzip': gzip.compress, 'bz2': bz2.compress, 'lzma': lzma.compress}

# the centralized strategy runs its global inference at site 0
CENTRAL = 0


@dataclass(frozen=True)
class PipelineSettings:
    batch_period: int = 300
    max_iters: int = 50
    candidates_k: int = 5
    first_window: int = 60
    memoize: bool = True
    truncation: str = 'cr'
    window: int = 1200
    cr_window: int = 30
    cr_margin: float = 10.0
    recent_history: int = 600
    detect_changes: bool = False
    min_epochs: int = 5
    prune_margin: float = 50.0
    tag_memory_bytes: int = 65536

    def __post_init__(self):
        if self.truncation not in TRUNCATION_MODES:
            raise ConfigurationError(f"truncation must be one of {TRUNCATION_MODES}, got {self.truncation!r}")
        if self.batch_period < 1:
            raise ConfigurationError("batch_period must be >= 1")

    @classmethod
    def from_config(cls, config: Config, **overrides) -> 'PipelineSettings':
        inference = config.get('inference')
        trunc = config.get('truncation')
        distrib = config.get('distrib')
        values = dict(
            batch_period=int(inference['batch_period']),
            max_iters=int(inference['max_iters']),
            candidates_k=int(inference['candidates_k']),
            first_window=int(inference['first_window']),
            memoize=bool(inference['memoize']),
            truncation=inference['truncation'],
            window=int(inference['window']),
            cr_window=int(trunc['cr_window']),
            cr_margin=float(trunc['cr_margin']),
            recent_history=int(trunc['recent_history']),
            detect_changes=bool(config.get('changepoint', 'enabled')),
            min_epochs=int(config.get('changepoint', 'min_epochs')),
            prune_margin=float(distrib['prune_margin']),
            tag_memory_bytes=int(distrib['tag_memory_bytes']),
        )
        values.update(overrides)
        return cls(**values)


@dataclass
class BatchSnapshot:
    """What a site believed about the objects present at a batch end"""
    site: int
    t: int
    objects: np.ndarray
    containers: np.ndarray
    locations: np.ndarray      # global location ids
    confident: np.ndarray
    wall_time_s: float
    retained_epochs: int
    iterations: int


@dataclass(frozen=True)
class MigrationPacket:
    source: int
    destination: int
    object: int
    t_exit: int
    strategy: str
    state: bytes = b''
    query_state: bytes = b''
    query_block: Optional[SharedStateBlock] = field(default=None, compare=False, repr=False)
    carries_centroid: bool = False

    @property
    def packet_id(self) -> Tuple[int, int, int]:
        return self.source, self.object, self.t_exit

    @property
    def size(self) -> int:
        return len(self.state) + len(self.query_state)

    def weights(self) -> Dict[int, float]:
        return CollapsedState.from_bytes(self.state).weights.get(self.object, {})

    def query(self) -> Optional[ObjectQueryState]:
        if not self.query_state:
            return None
        if self.query_block is None or self.carries_centroid:
            return ObjectQueryState.from_bytes(self.query_state)
        _, image = decode_delta(self.query_block.centroid, self.query_state)
        return ObjectQueryState.from_bytes(image)


@dataclass
class CostLedger:
    strategy: str
    links: Dict[Tuple[int, int], int] = field(default_factory=dict)
    packets: int = 0
    over_budget: int = 0

    def record(self, source: int, destination: int, n_bytes: int):
        key = (source, destination)
        self.links[key] = self.links.get(key, 0) + int(n_bytes)

    def charge(self, packet: MigrationPacket, budget: int):
        self.record(packet.source, packet.destination, packet.size)
        self.packets += 1
        if packet.size > budget:
            self.over_budget += 1
            logger.warning(f"Packet for object {packet.object} is {packet.size} bytes, "
                           f"over the {budget}-byte tag memory budget")

    @property
    def total_bytes(self) -> int:
        return sum(self.links.values())

    def to_frame(self) -> pd.DataFrame:
        rows = [(s, d, n) for (s, d), n in sorted(self.links.items())]
        return pd.DataFrame(rows, columns=['source', 'destination', 'bytes'])


def _first_reads(reads: np.ndarray, n_tags: int) -> np.ndarray:
    """Epoch of each tag's first reading; -1 for tags never read"""
    first = np.full(n_tags, -1, dtype=np.int64)
    if len(reads):
        tags, idx = np.unique(reads[:, 2], return_index=True)
        first[tags] = reads[idx, 0]
    return first


class SiteRuntime:
    """Streaming inference state of one site"""

    def __init__(self, site: int, stream: ObservationHistory, rates: ReadRateTable,
                 settings: PipelineSettings, strategy: str = 'none',
                 threshold: Optional[Threshold] = None, location_offset: int = 0,
                 monitor: Optional[ExposureMonitor] = None,
                 temperatures: Optional[TemperatureStream] = None):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown migration strategy {strategy!r}")
        self.site = site
        self.stream = stream
        self.rates = rates
        self.settings = settings
        self.strategy = strategy
        self.threshold = threshold
        self.location_offset = location_offset
        self.monitor = monitor
        self.temperatures = temperatures

        self.arrival_objects = _first_reads(stream.object_reads, stream.n_objects)
        self.arrival_containers = _first_reads(stream.container_reads, stream.n_containers)
        self.containment = ContainmentMap.empty(stream.n_objects, stream.n_containers)
        self.priors: Dict[int, Dict[int, float]] = {}
        self.regions: Dict[int, CriticalRegion] = {}
        self.watermarks: Dict[int, Watermark] = {}
        self.kept_objects: Dict[int, Tuple[Interval, ...]] = {}
        self.kept_containers: Dict[int, Tuple[Interval, ...]] = {}
        self.departed: Set[int] = set()
        self.seen_packets: Set[Tuple[int, int, int]] = set()
        self.query_states: Dict[int, ObjectQueryState] = {}
        self.alerts: List[Alert] = []
        self.reports: List[ChangePointReport] = []
        self.snapshots: List[BatchSnapshot] = []
        self.result: Optional[InferenceResult] = None
        self.history: Optional[ObservationHistory] = None
        self.last_batch = -1

    # -- scopes ------------------------------------------------------------

    def _scope(self, arrival: int, consumed: int, kept: Optional[Tuple[Interval, ...]],
               now: int) -> Tuple[Interval, ...]:
        if arrival < 0 or arrival > now:
            return ()
        live = ((max(arrival, consumed), now),)
        mode = self.settings.truncation
        if mode == 'window':
            return intersect_intervals(live, ((now - self.settings.window + 1, now),))
        if mode == 'cr' and kept is not None:
            return intersect_intervals(normalize_intervals(kept + ((self.last_batch + 1, now),)), live)
        return live

    def _batch_history(self, now: int) -> ObservationHistory:
        object_scopes, container_scopes = {}, {}
        for o in range(self.stream.n_objects):
            if o in self.departed:
                object_scopes[o] = ()
                continue
            mark = self.watermarks.get(o)
            object_scopes[o] = self._scope(int(self.arrival_objects[o]), mark.consumed if mark else 0,
                                           self.kept_objects.get(o), now)
        for c in range(self.stream.n_containers):
            container_scopes[c] = self._scope(int(self.arrival_containers[c]), 0,
                                              self.kept_containers.get(c), now)
        starts = [s[0][0] for s in list(object_scopes.values()) + list(container_scopes.values()) if s]
        t_begin = min(starts) if starts else now

        def within(reads):
            return reads[(reads[:, 0] >= t_begin) & (reads[:, 0] <= now)]

        return ObservationHistory.from_reads(
            t_begin, now, self.stream.n_locations, self.stream.n_containers, self.stream.n_objects,
            within(self.stream.container_reads), within(self.stream.object_reads),
            container_scopes, object_scopes)

    # -- the batch ---------------------------------------------------------

    def run_batch(self, now: int) -> BatchSnapshot:
        """Infer over everything buffered up to `now`, detect changes, then truncate"""
        if now <= self.last_batch:
            raise ValueError(f"site {self.site}: batch at t={now} does not advance past t={self.last_batch}")
        started = time.time()
        s = self.settings
        history = self._batch_history(now)
        present = [o for o in range(history.n_objects) if history.object_scope(o)]

        candidates = build_candidates(history, s.first_window, s.recent_history, s.candidates_k)
        previous = {o: self.containment.container_of(o) for o in present}
        candidates = admit(candidates, previous)
        for o, prior in self.priors.items():
            if o in candidates:
                for c in sorted(prior, key=lambda c: -prior[c]):
                    candidates = admit(candidates, {o: c})

        assignment = initial_containment(history).assignment.copy()
        for o in present:
            if previous[o] != NONE:
                assignment[o] = previous[o]
            elif self.priors.get(o):
                prior = self.priors[o]
                assignment[o] = max(sorted(prior), key=lambda c: prior[c])
        init = ContainmentMap(assignment, history.n_containers)

        engine = RFInfer(history, self.rates, s.memoize)
        priors = {o: p for o, p in self.priors.items() if o in candidates}
        result = engine.run(init, s.max_iters, candidates, priors)
        final = result.containment.assignment.copy()

        evidence = {}
        if s.detect_changes or s.truncation == 'cr':
            for o in present:
                series = result.evidence(o)
                if series is not None and series.n_epochs:
                    evidence[o] = series

        if s.detect_changes and self.threshold is not None:
            reports = detect(evidence, self.threshold, self.watermarks, s.recent_history, s.min_epochs)
            for r in reports:
                final[r.object] = r.new_container
                self.priors.pop(r.object, None)
                self.regions.pop(r.object, None)
                evidence[r.object] = evidence[r.object].since(r.t_change)
            self.reports.extend(reports)

        if s.truncation == 'cr':
            regions = find_critical_region(evidence, s.cr_window, s.cr_margin, self.regions)
            self.regions = {o: cr for o, cr in regions.items() if cr is not None}
            kept = truncate(history, self.regions, RecentHistory.ending_at(now, s.recent_history),
                            result.candidates)
            self.kept_objects = {o: kept.object_scope(o) for o in present}
            self.kept_containers = {c: kept.container_scope(c) for c in range(kept.n_containers)
                                    if history.container_scope(c)}
            retained = sum(interval_length(self.kept_objects[o]) for o in present)
        else:
            retained = sum(interval_length(history.object_scope(o)) for o in present)

        self.containment = ContainmentMap(final, history.n_containers)
        result.containment = self.containment
        self.result, self.history = result, history
        if self.monitor is not None:
            self._advance_monitor(present, now)
        snapshot = self._snapshot(present, now, time.time() - started, retained, result.iterations)
        self.last_batch = now
        logger.info(f"Site {self.site} batch t={now}: {len(present)} objects, "
                    f"{result.iterations} EM iterations, {snapshot.wall_time_s:.2f}s")
        return snapshot

    def _global(self, locations: np.ndarray) -> np.ndarray:
        return np.where(locations >= 0, locations + self.location_offset, NONE)

    def _snapshot(self, present: List[int], now: int, wall: float, retained: int,
                  iterations: int) -> BatchSnapshot:
        located = [self.result.object_location(o, now) for o in present]
        snapshot = BatchSnapshot(
            self.site, now, np.array(present, dtype=np.int64),
            np.array([self.containment.container_of(o) for o in present], dtype=np.int64),
            self._global(np.array([loc for loc, _ in located], dtype=np.int64)),
            np.array([ok for _, ok in located], dtype=bool), wall, retained, iterations)
        self.snapshots.append(snapshot)
        return snapshot

    def _advance_monitor(self, present: List[int], now: int):
        for o in present:
            start = max(self.last_batch + 1, int(self.arrival_objects[o]))
            times = np.arange(start, now + 1)
            if len(times) == 0:
                continue
            locations = self._global(self.result.object_track(o, times))
            containers = np.full(len(times), self.containment.container_of(o))
            state = self.query_states.setdefault(o, ObjectQueryState(o))
            self.alerts.extend(self.monitor.advance(state, times, locations, containers, self.temperatures))

    # -- migration ---------------------------------------------------------

    def export(self, departure: Departure) -> List[MigrationPacket]:
        """Packets for the objects leaving with a case; they are dropped from this site"""
        objects = [o for o in departure.objects if o not in self.departed]
        self.departed.update(objects)
        states = [self.query_states.pop(o) for o in objects if o in self.query_states]
        if departure.next_site == NONE or self.strategy == 'centralized':
            return []
        if self.strategy == 'none':
            return [MigrationPacket(self.site, departure.next_site, o, departure.t, 'none') for o in objects]

        block = share(states) if states and self.monitor is not None else None
        centroid_tag = ObjectQueryState.from_bytes(block.centroid).tag_id if block else NONE
        packets = []
        for o in objects:
            weights = self.result.weights.weights.get(o) if self.result is not None else None
            weights = weights or self.priors.get(o, {})
            state = CollapsedState({o: weights}).prune(self.settings.prune_margin).to_bytes() if weights else b''
            query = b''
            if block is not None:
                query = block.centroid if o == centroid_tag else block.deltas.get(o, b'')
            packets.append(MigrationPacket(self.site, departure.next_site, o, departure.t, 'cr',
                                           state, query, block, o == centroid_tag))
        logger.info(f"Site {self.site} exported {len(packets)} objects of case {departure.case} "
                    f"to site {departure.next_site} ({sum(p.size for p in packets)} bytes)")
        return packets


def apply_migration(site: SiteRuntime, packet: MigrationPacket) -> SiteRuntime:
    """Seed the receiving site with a packet's collapsed weights and query state"""
    if packet.packet_id in site.seen_packets:
        logger.debug(f"Site {site.site}: duplicate packet {packet.packet_id} ignored")
        return site
    if packet.strategy != site.strategy:
        raise ValueError(f"site {site.site} runs strategy {site.strategy!r}, "
                         f"packet uses {packet.strategy!r}")
    site.seen_packets.add(packet.packet_id)
    if packet.strategy == 'none':
        return site
    o = packet.object
    if not 0 <= o < site.stream.n_objects:
        logger.warning(f"Site {site.site}: packet for unknown object {o}, starting it fresh")
        return site
    weights = packet.weights()
    if weights:
        prior = site.priors.setdefault(o, {})
        for c, w in weights.items():
            prior[c] = prior.get(c, 0.0) + w
    query = packet.query()
    if query is not None:
        site.query_states[o] = query
    return site


# ---------------------------------------------------------------------------
# The harness
# ---------------------------------------------------------------------------

@dataclass
class DistributedRun:
    strategy: str
    sites: List[SiteRuntime]
    ledger: CostLedger
    wall_time_s: float

    @property
    def snapshots(self) -> List[BatchSnapshot]:
        return [snap for site in self.sites for snap in site.snapshots]

    @property
    def reports(self) -> List[ChangePointReport]:
        return sorted((r for site in self.sites for r in site.reports), key=lambda r: (r.t_change, r.object))

    @property
    def alerts(self) -> List[Alert]:
        return sorted((a for site in self.sites for a in site.alerts), key=lambda a: (a.t_alert, a.tag_id))

    @property
    def max_batch_wall_time(self) -> float:
        return max((snap.wall_time_s for snap in self.snapshots), default=0.0)

    def estimates(self) -> pd.DataFrame:
        """One row per (batch end, object) estimate; site is -1 for the global inference"""
        frames = []
        for site in self.sites:
            label = -1 if self.strategy == 'centralized' else site.site
            for snap in site.snapshots:
                frames.append(pd.DataFrame({
                    't': snap.t, 'site': label, 'object': snap.objects, 'container': snap.containers,
                    'location': snap.locations, 'confident': snap.confident}))
        if not frames:
            return pd.DataFrame(columns=['t', 'site', 'object', 'container', 'location', 'confident'])
        return pd.concat(frames, ignore_index=True)


def batch_schedule(duration: int, batch_period: int) -> List[int]:
    ends = list(range(batch_period - 1, duration, batch_period))
    if not ends or ends[-1] != duration - 1:
        ends.append(duration - 1)
    return ends


def merged_history(bundle: TraceBundle) -> Tuple[ObservationHistory, ReadRateTable]:
    """All sites' readings over global location ids, with a block-diagonal rate table"""
    R = bundle.locations_per_site
    c_reads, o_reads = [], []
    for s, h in enumerate(bundle.histories):
        c_reads.append(h.container_reads + np.array([0, s * R, 0]))
        o_reads.append(h.object_reads + np.array([0, s * R, 0]))
    first = bundle.histories[0]
    history = ObservationHistory.from_reads(
        first.t_begin, first.t_end, R * bundle.n_sites, bundle.n_containers, bundle.n_objects,
        np.concatenate(c_reads), np.concatenate(o_reads))
    return history, ReadRateTable.block_diagonal(bundle.rates)


def centralized_bytes(bundle: TraceBundle, codec: str = 'gzip') -> Dict[int, int]:
    """Compressed size of each non-central site's raw trace"""
    if codec not in CODECS:
        raise ConfigurationError(f"unknown codec {codec!r}, choose from {sorted(CODECS)}")
    R = bundle.locations_per_site
    return {s: len(CODECS[codec](trace_text(h, bundle.tag_index, s * R).encode()))
            for s, h in enumerate(bundle.histories) if s != CENTRAL}


def _threshold_for(threshold, site: int) -> Optional[Threshold]:
    if threshold is None or isinstance(threshold, Threshold):
        return threshold
    return threshold.get(site)


def run_distributed(bundle: TraceBundle, strategy: str, settings: PipelineSettings,
                    threshold: Union[Threshold, Mapping[int, Threshold], None] = None,
                    monitor_factory=None, codec: str = 'gzip') -> DistributedRun:
    """Run every site's pipeline on a shared batch schedule.

    Sites are stepped in topological order at each batch end, so packets
    from an upstream export reach the downstream site before its batch
    covering the object's arrival. monitor_factory, if given, builds one
    ExposureMonitor per site.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown migration strategy {strategy!r}")
    started = time.time()
    ledger = CostLedger(strategy)
    schedule = batch_schedule(bundle.duration, settings.batch_period)
    R = bundle.locations_per_site

    def monitor_for():
        return monitor_factory() if monitor_factory is not None else None

    if strategy == 'centralized':
        history, rates = merged_history(bundle)
        site = SiteRuntime(CENTRAL, history, rates, settings, strategy, _threshold_for(threshold, CENTRAL),
                           0, monitor_for(), bundle.temperatures)
        for s, n in centralized_bytes(bundle, codec).items():
            ledger.record(s, CENTRAL, n)
        for now in schedule:
            site.run_batch(now)
        sites = [site]
    else:
        sites = [SiteRuntime(s, h, bundle.rates[s], settings, strategy, _threshold_for(threshold, s),
                             s * R, monitor_for(), bundle.temperatures)
                 for s, h in enumerate(bundle.histories)]
        departures: Dict[int, List[Departure]] = {}
        for d in sorted(bundle.departures, key=lambda d: (d.t, d.case)):
            departures.setdefault(d.site, []).append(d)
        inbox: Dict[int, List[MigrationPacket]] = {}
        order = topological_order(bundle.config.topology, bundle.n_sites)
        for now in schedule:
            for s in order:
                site = sites[s]
                for packet in inbox.pop(s, []):
                    apply_migration(site, packet)
                previous = site.last_batch
                site.run_batch(now)
                for d in departures.get(s, []):
                    if previous < d.t <= now:
                        for packet in site.export(d):
                            ledger.charge(packet, settings.tag_memory_bytes)
                            inbox.setdefault(packet.destination, []).append(packet)

    wall = time.time() - started
    logger.info(f"Distributed run ({strategy}): {len(schedule)} batches over {bundle.n_sites} sites, "
                f"{ledger.total_bytes} bytes in {ledger.packets} packets, {wall:.1f}s")
    return DistributedRun(strategy, sites, ledger, wall)


def run_site(bundle: TraceBundle, settings: PipelineSettings,
             threshold: Union[Threshold, Mapping[int, Threshold], None] = None,
             monitor_factory=None) -> DistributedRun:
    """Independent per-site pipelines: the single-warehouse experiments"""
    return run_distributed(bundle, 'none', settings, threshold, monitor_factory)
