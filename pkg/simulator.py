#!/usr/bin/env python3
"""
Discrete-event RFID supply-chain simulator

Pallets of tagged cases (containers) holding tagged items (objects) enter the
source warehouse, wait at the entry door, pass the belt one case at a time,
rest on a shelf, leave through the exit door and travel to the next
warehouse of a single-source DAG. Movements run as simpy processes and are
logged as ground-truth change logs; readings are drawn afterwards from those
timelines with each reader's interrogation schedule.
"""

import logging
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import simpy

from config_loader import Config, ConfigurationError
from core_model import (
    NONE,
    GroundTruth,
    GroundTruthRecorder,
    ObservationHistory,
    ReadRateTable,
    TagIndex,
)

logger = logging.getLogger('rftrack.sim')

ENTRY, BELT = 0, 1
READ_CHUNK = 512


@dataclass(frozen=True)
class SupplyChainConfig:
    """Generation parameters; names follow the simulator config section"""
    name: str = 'default'
    warehouses: int = 1
    topology: str = 'chain'
    duration: int = 1500
    pallet_period: int = 60
    max_pallets: int = 0
    cases_per_pallet: int = 5
    items_per_case: int = 20
    rr: float = 0.8
    rr_spread: float = 0.0
    or_rate: float = 0.5
    or_spread: float = 0.0
    fa: int = 0
    shelves: int = 16
    shelf_period: int = 10
    shelf_dwell: int = 600
    door_dwell: int = 5
    belt_dwell: int = 5
    exit_dwell: int = 5
    transit: int = 120
    mobile: bool = False
    shelves_per_aisle: int = 90
    seconds_per_shelf: int = 10
    change_script: bool = False
    reference_tags: bool = False
    freezer_shelves: Tuple[int, ...] = ()
    freezer_fraction: float = 0.0
    freezer_temp: float = -18.0
    ambient_temp: float = 20.0
    seed: int = 0

    @classmethod
    def from_config(cls, config: Config, **overrides) -> 'SupplyChainConfig':
        section = dict(config.get('simulator'))
        section['or_rate'] = section.pop('or', cls.or_rate)
        section['freezer_shelves'] = tuple(section.get('freezer_shelves') or ())
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in section.items() if k in known}
        values.update(overrides)
        return cls(**values)

    @property
    def locations_per_site(self) -> int:
        return self.shelves + 3

    @property
    def traversal(self) -> int:
        """Seconds for one pallet to clear the first warehouse"""
        return (self.door_dwell + self.belt_dwell * self.cases_per_pallet
                + self.shelf_dwell + self.exit_dwell)

    def check(self, duration: Optional[int] = None):
        duration = self.duration if duration is None else duration
        if duration < self.traversal:
            raise ConfigurationError(
                f"duration {duration}s is shorter than one pallet traversal ({self.traversal}s)")
        if self.warehouses < 1 or self.shelves < 1 or self.cases_per_pallet < 1:
            raise ConfigurationError("warehouses, shelves and cases_per_pallet must be >= 1")
        if self.topology not in ('chain', 'tree'):
            raise ConfigurationError(f"unknown topology {self.topology}")
        if self.pallet_period < 1 or self.shelf_period < 1:
            raise ConfigurationError("pallet_period and shelf_period must be >= 1")
        if any(not 0 <= s < self.shelves for s in self.freezer_shelves):
            raise ConfigurationError(f"freezer_shelves must index shelves 0..{self.shelves - 1}")


@dataclass(frozen=True)
class WarehouseConfig:
    """Reader layout of one warehouse: entry, belt, shelves, exit"""
    shelves: int
    rr: np.ndarray
    overlap: np.ndarray
    shelf_period: int = 10
    mobile: bool = False
    shelves_per_aisle: int = 90
    seconds_per_shelf: int = 10

    @property
    def n_locations(self) -> int:
        return self.shelves + 3

    @property
    def exit(self) -> int:
        return self.shelves + 2

    def shelf(self, i: int) -> int:
        return 2 + i

    def is_shelf(self, location: int) -> bool:
        return 2 <= location < 2 + self.shelves

    def true_pi(self) -> np.ndarray:
        """Unclamped read rates: own reader RR, adjacent shelves OR, nothing else"""
        pi = np.zeros((self.n_locations, self.n_locations))
        np.fill_diagonal(pi, self.rr)
        for i in range(self.shelves - 1):
            a, b = self.shelf(i), self.shelf(i + 1)
            pi[a, b] = pi[b, a] = self.overlap[i]
        return pi

    def read_rates(self, clamp_eps: float) -> ReadRateTable:
        return ReadRateTable(self.true_pi(), clamp_eps)

    def active(self, n_epochs: int) -> np.ndarray:
        """active[r, t]: whether reader r interrogates in epoch t"""
        t = np.arange(n_epochs)
        active = np.ones((self.n_locations, n_epochs), dtype=bool)
        for i in range(self.shelves):
            r = self.shelf(i)
            if self.mobile:
                aisle = i // self.shelves_per_aisle
                size = min(self.shelves_per_aisle, self.shelves - aisle * self.shelves_per_aisle)
                active[r] = (t // self.seconds_per_shelf) % size == i % self.shelves_per_aisle
            else:
                active[r] = t % self.shelf_period == 0
        return active


@dataclass(frozen=True)
class Departure:
    t: int
    case: int
    site: int
    next_site: int
    objects: Tuple[int, ...] = ()


@dataclass(frozen=True)
class TemperatureStream:
    """Temperature per global location; constant in time, missing in transit"""
    location_temps: np.ndarray

    def at(self, location: int, t: int = 0) -> Optional[float]:
        if location == NONE or not 0 <= location < len(self.location_temps):
            return None
        return float(self.location_temps[location])


@dataclass
class TraceBundle:
    config: SupplyChainConfig
    histories: List[ObservationHistory]
    rates: List[ReadRateTable]
    truth: GroundTruth
    tag_index: TagIndex
    departures: List[Departure]
    events: pd.DataFrame
    temperatures: TemperatureStream
    container_types: Dict[int, str]
    reference: List[Optional[ObservationHistory]] = field(default_factory=list)
    reference_locations: Dict[int, int] = field(default_factory=dict)
    interrogations: List[np.ndarray] = field(default_factory=list)

    @property
    def n_sites(self) -> int:
        return len(self.histories)

    @property
    def n_containers(self) -> int:
        return self.histories[0].n_containers

    @property
    def n_objects(self) -> int:
        return self.histories[0].n_objects

    @property
    def locations_per_site(self) -> int:
        return self.config.locations_per_site

    @property
    def duration(self) -> int:
        return self.histories[0].n_epochs


class Warehouse:
    """Mutable per-site state of a running simulation"""

    def __init__(self, env: simpy.Environment, site: int, layout: WarehouseConfig,
                 successors: Sequence[int], freezer_shelves: Sequence[int]):
        self.env = env
        self.site = site
        self.layout = layout
        self.belt = simpy.Resource(env, capacity=1)
        self.successors = list(successors)
        self.shelved: Dict[int, int] = {}
        freezer = sorted(set(freezer_shelves))
        normal = [s for s in range(layout.shelves) if s not in freezer]
        self._shelves = {True: freezer or normal, False: normal or freezer}
        self._next_shelf = {True: 0, False: 0}
        self._next_successor = 0

    def next_shelf(self, freezer: bool) -> int:
        choices = self._shelves[freezer]
        shelf = choices[self._next_shelf[freezer] % len(choices)]
        self._next_shelf[freezer] += 1
        return shelf

    def dispatch(self) -> int:
        if not self.successors:
            return NONE
        nxt = self.successors[self._next_successor % len(self.successors)]
        self._next_successor += 1
        return nxt


def successors(topology: str, n_sites: int) -> Dict[int, List[int]]:
    if topology == 'chain':
        return {w: [w + 1] if w + 1 < n_sites else [] for w in range(n_sites)}
    return {w: [c for c in (2 * w + 1, 2 * w + 2) if c < n_sites] for w in range(n_sites)}


def topological_order(topology: str, n_sites: int) -> List[int]:
    # both topologies only route to higher site ids
    return list(range(n_sites))


class SupplyChainSimulation:
    def __init__(self, config: SupplyChainConfig, clamp_eps: float = 1e-6):
        config.check()
        self.config = config
        self.clamp_eps = clamp_eps
        self.rng = np.random.default_rng(config.seed)
        self.env = simpy.Environment()
        self.recorder = GroundTruthRecorder(config.locations_per_site)
        self.layouts = [self._layout() for _ in range(config.warehouses)]
        routes = successors(config.topology, config.warehouses)
        self.sites = [Warehouse(self.env, w, self.layouts[w], routes[w], config.freezer_shelves)
                      for w in range(config.warehouses)]
        self.members: Dict[int, List[int]] = {}
        self.case_location: Dict[int, int] = {}
        self.case_site: Dict[int, int] = {}
        self.container_types: Dict[int, str] = {}
        self.departures: List[Departure] = []
        self.events: List[dict] = []
        self.n_items = 0

    def _layout(self) -> WarehouseConfig:
        c = self.config
        n_readers = c.shelves + 3
        rr = np.full(n_readers, c.rr)
        if c.rr_spread:
            rr = np.clip(self.rng.uniform(c.rr - c.rr_spread, c.rr + c.rr_spread, n_readers), 0.01, 1.0)
        overlap = np.full(max(c.shelves - 1, 0), c.or_rate)
        if c.or_spread:
            overlap = np.clip(self.rng.uniform(c.or_rate - c.or_spread, c.or_rate + c.or_spread,
                                               len(overlap)), 0.0, 0.99)
        return WarehouseConfig(c.shelves, rr, overlap, c.shelf_period, c.mobile,
                               c.shelves_per_aisle, c.seconds_per_shelf)

    @property
    def now(self) -> int:
        return int(self.env.now)

    def _log(self, event: str, site: int = NONE, case: int = NONE, obj: int = NONE, detail: str = ''):
        self.events.append({'t': self.now, 'event': event, 'site': site, 'case': case,
                            'object': obj, 'detail': detail})

    def move(self, case: int, site: int, location: int):
        glob = NONE if location == NONE else site * self.config.locations_per_site + location
        self.case_location[case] = glob
        self.case_site[case] = site
        self.recorder.container_moved(self.now, case, glob)

    def new_case(self) -> int:
        case = len(self.members)
        items = list(range(self.n_items, self.n_items + self.config.items_per_case))
        self.n_items += len(items)
        self.members[case] = items
        freezer = self.rng.random() < self.config.freezer_fraction
        self.container_types[case] = 'freezer' if freezer else 'case'
        for o in items:
            self.recorder.object_contained(self.now, o, case)
        return case

    # -- processes ---------------------------------------------------------

    def pallet_source(self):
        pallets = 0
        while not self.config.max_pallets or pallets < self.config.max_pallets:
            cases = [self.new_case() for _ in range(self.config.cases_per_pallet)]
            self._log('pallet', 0, detail=f"pallet {pallets}: cases {cases[0]}-{cases[-1]}")
            for case in cases:
                self.env.process(self.case_flow(case, 0))
            pallets += 1
            yield self.env.timeout(self.config.pallet_period)

    def case_flow(self, case: int, site: int):
        c = self.config
        wh = self.sites[site]
        layout = wh.layout
        self.move(case, site, ENTRY)
        self._log('arrive', site, case)
        yield self.env.timeout(c.door_dwell)
        with wh.belt.request() as slot:
            yield slot
            self.move(case, site, BELT)
            yield self.env.timeout(c.belt_dwell)
        shelf = wh.next_shelf(self.container_types[case] == 'freezer')
        self.move(case, site, layout.shelf(shelf))
        wh.shelved[case] = shelf
        yield self.env.timeout(c.shelf_dwell)
        del wh.shelved[case]
        self.move(case, site, layout.exit)
        yield self.env.timeout(c.exit_dwell)
        nxt = wh.dispatch()
        self.move(case, site, NONE)
        self.departures.append(Departure(self.now, case, site, nxt, tuple(self.members[case])))
        self._log('depart', site, case, detail=f"to {nxt}")
        if nxt != NONE:
            yield self.env.timeout(c.transit)
            self.env.process(self.case_flow(case, nxt))

    def anomaly_process(self, site: int):
        while True:
            yield self.env.timeout(self.config.fa)
            self.inject_anomaly(site)

    def inject_anomaly(self, site: int) -> Optional[Tuple[int, int, int]]:
        """Move a random item between two shelved cases of a warehouse"""
        cases = sorted(c for c in self.sites[site].shelved if self.members[c])
        others = sorted(self.sites[site].shelved)
        if len(cases) < 1 or len(others) < 2:
            logger.warning(f"t={self.now}: site {site} has fewer than 2 shelved cases, anomaly skipped")
            return None
        source = int(self.rng.choice(cases))
        target = int(self.rng.choice([c for c in others if c != source]))
        obj = int(self.rng.choice(self.members[source]))
        self._transfer(obj, source, target)
        self._log('anomaly', site, source, obj, f"to case {target}")
        return obj, source, target

    def _transfer(self, obj: int, source: int, target: int):
        self.members[source].remove(obj)
        if target != NONE:
            self.members[target].append(obj)
        self.recorder.object_contained(self.now, obj, target)
        self.recorder.change(self.now, obj, source, target)

    def change_script(self, total_cases: int):
        """Three moves among distinct cases and one removal, once every case is shelved"""
        while len(self.sites[0].shelved) < total_cases:
            yield self.env.timeout(1)
        yield self.env.timeout(60)
        cases = [int(c) for c in self.rng.permutation(sorted(self.sites[0].shelved))]
        for i in range(3):
            source, target = cases[2 * i], cases[2 * i + 1]
            obj = int(self.rng.choice(self.members[source]))
            self._transfer(obj, source, target)
            self._log('moved', 0, source, obj, f"to case {target}")
        source = cases[6]
        obj = int(self.rng.choice(self.members[source]))
        self._transfer(obj, source, NONE)
        self.recorder.object_moved(self.now, obj, NONE)
        self._log('removed', 0, source, obj)
        self.recorder.flags['changed_case_fraction'] = 7 / total_cases

    # -- run ---------------------------------------------------------------

    def run(self, duration: Optional[int] = None) -> TraceBundle:
        c = self.config
        duration = c.duration if duration is None else duration
        c.check(duration)
        self.env.process(self.pallet_source())
        if c.fa:
            for site in range(c.warehouses):
                self.env.process(self.anomaly_process(site))
        if c.change_script:
            total = c.cases_per_pallet * max(c.max_pallets, 1)
            if total < 7:
                raise ConfigurationError("the change script needs at least 7 cases")
            self.env.process(self.change_script(total))
        self.env.run(until=duration)
        logger.info(f"Simulated {duration}s: {len(self.members)} cases, {self.n_items} items, "
                    f"{len(self.recorder.change_points)} containment changes, "
                    f"{len(self.departures)} departures")
        return self._bundle(duration)

    def _bundle(self, duration: int) -> TraceBundle:
        c = self.config
        truth = self.recorder.build()
        n_c, n_o = len(self.members), self.n_items
        histories, rates, reference, interrogations = [], [], [], []
        ref_locations = {}
        for site, layout in enumerate(self.layouts):
            active = layout.active(duration)
            c_reads, o_reads = self._site_reads(truth, site, layout, active, duration, n_c, n_o)
            histories.append(ObservationHistory.from_reads(
                0, duration - 1, layout.n_locations, n_c, n_o, c_reads, o_reads))
            rates.append(layout.read_rates(self.clamp_eps))
            interrogations.append(active.sum(axis=1))
            if c.reference_tags:
                locs = np.repeat(np.arange(layout.n_locations)[:, None], duration, axis=1)
                reads = _draw_reads(self.rng, lambda lo, hi: locs[lo:hi], layout.n_locations,
                                    layout.true_pi(), active)
                reference.append(ObservationHistory.from_reads(
                    0, duration - 1, layout.n_locations, 0, layout.n_locations, (), reads))
                ref_locations = {i: i for i in range(layout.n_locations)}
            else:
                reference.append(None)

        temps = np.full(c.warehouses * c.locations_per_site, c.ambient_temp)
        for site in range(c.warehouses):
            for s in c.freezer_shelves:
                temps[site * c.locations_per_site + 2 + s] = c.freezer_temp
        events = pd.DataFrame(self.events, columns=['t', 'event', 'site', 'case', 'object', 'detail'])
        return TraceBundle(c, histories, rates, truth, TagIndex.identity(n_c, n_o),
                           list(self.departures), events, TemperatureStream(temps),
                           dict(self.container_types), reference, ref_locations, interrogations)

    def _site_reads(self, truth: GroundTruth, site: int, layout: WarehouseConfig,
                    active: np.ndarray, duration: int, n_c: int, n_o: int):
        epochs = np.arange(duration)
        offset = site * self.config.locations_per_site
        R = layout.n_locations

        def local(glob):
            inside = (glob >= offset) & (glob < offset + R)
            return np.where(inside, glob - offset, NONE)

        case_locs = np.full((n_c, duration), NONE, dtype=np.int64)
        for case, timeline in truth.container_location.items():
            case_locs[case] = timeline.at(epochs)

        def container_block(lo, hi):
            return local(case_locs[lo:hi])

        def object_block(lo, hi):
            block = np.full((hi - lo, duration), NONE, dtype=np.int64)
            for i, o in enumerate(range(lo, hi)):
                cont = truth.object_container[o].at(epochs)
                inside = cont != NONE
                block[i, inside] = case_locs[cont[inside], epochs[inside]]
                own = truth.object_location.get(o)
                if own is not None:
                    block[i, ~inside] = own.at(epochs[~inside])
            return local(block)

        pi = layout.true_pi()
        c_reads = _draw_reads(self.rng, container_block, n_c, pi, active)
        o_reads = _draw_reads(self.rng, object_block, n_o, pi, active)
        return c_reads, o_reads


def _draw_reads(rng: np.random.Generator, block, n_tags: int, pi: np.ndarray,
                active: np.ndarray) -> np.ndarray:
    """Sample (t, reader, tag) triples for tags whose local locations block(lo, hi) yields"""
    n_loc = pi.shape[0]
    width = max(int((pi > 0).sum(axis=0).max()), 1)
    readers_of = np.zeros((n_loc, width), dtype=np.int64)
    rate_of = np.zeros((n_loc, width))
    for a in range(n_loc):
        readers = np.flatnonzero(pi[:, a] > 0)
        readers_of[a, :len(readers)] = readers
        rate_of[a, :len(readers)] = pi[readers, a]

    out = [np.empty((0, 3), dtype=np.int64)]
    for lo in range(0, n_tags, READ_CHUNK):
        hi = min(lo + READ_CHUNK, n_tags)
        locs = block(lo, hi)
        present = locs != NONE
        if not present.any():
            continue
        safe = np.where(present, locs, 0)
        epochs = np.broadcast_to(np.arange(locs.shape[1]), locs.shape)
        for j in range(width):
            reader = readers_of[safe, j]
            rate = rate_of[safe, j]
            hit = present & (rate > 0) & active[reader, epochs] & (rng.random(locs.shape) < rate)
            tag, t = np.nonzero(hit)
            out.append(np.column_stack([t, reader[tag, t], tag + lo]))
    return np.concatenate(out)


def generate(config: SupplyChainConfig, duration: Optional[int] = None,
             clamp_eps: float = 1e-6) -> TraceBundle:
    return SupplyChainSimulation(config, clamp_eps).run(duration)


def inject_anomaly(state: SupplyChainSimulation, site: int = 0) -> Optional[Tuple[int, int, int]]:
    return state.inject_anomaly(site)


def lab_scenarios() -> List[SupplyChainConfig]:
    """T1-T4 over RR x OR; T5-T8 repeat them with the containment change script"""
    base = SupplyChainConfig(
        warehouses=1, duration=900, max_pallets=1, cases_per_pallet=20, items_per_case=5,
        shelves=4, shelf_dwell=600, door_dwell=5, belt_dwell=5, exit_dwell=5)
    grid = [(0.85, 0.25), (0.85, 0.5), (0.7, 0.25), (0.7, 0.5)]
    scenarios = [replace(base, name=f"T{i + 1}", rr=rr, or_rate=ov) for i, (rr, ov) in enumerate(grid)]
    scenarios += [replace(s, name=f"T{i + 5}", change_script=True) for i, s in enumerate(scenarios)]
    return scenarios


def estimate_read_rates(history: ObservationHistory, reference_tags: Mapping[int, int],
                        interrogations, clamp_eps: float = 1e-6) -> ReadRateTable:
    """pi_hat[r, a] = reads by r of reference tags at a / interrogations of r"""
    R = history.n_locations
    reads = np.zeros((R, R))
    tags_at = np.zeros(R)
    for tag, loc in reference_tags.items():
        tags_at[loc] += 1
    obj = history.object_reads
    known = np.isin(obj[:, 2], list(reference_tags))
    obj = obj[known]
    locs = np.array([reference_tags[int(tag)] for tag in obj[:, 2]], dtype=np.int64)
    np.add.at(reads, (obj[:, 1], locs), 1)
    trials = np.broadcast_to(np.asarray(interrogations, dtype=float).reshape(-1, 1), (R, 1)) * tags_at
    with np.errstate(divide='ignore', invalid='ignore'):
        pi = np.where(trials > 0, reads / np.where(trials > 0, trials, 1), clamp_eps)
    return ReadRateTable(pi, clamp_eps)
