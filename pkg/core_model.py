#!/usr/bin/env python3
"""
Generative model of RFID readings over containers and objects.

Each epoch a container sits at one reader location (uniform prior), its
objects sit with it, and every reader independently reads every tag with
probability pi(reader, true location). Readings are stored sparsely as
(t, r, tag) triples; absence of a triple means "not read".
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

logger = logging.getLogger('rftrack.model')

NONE = -1
CLAMP_EPS = 1e-6

# EPC-style kind bit: external ids with this bit set are container tags
CONTAINER_BIT = 1 << 40

Interval = Tuple[int, int]


class TagKind(Enum):
    CONTAINER = 'container'
    OBJECT = 'object'


@dataclass(frozen=True)
class TagId:
    id: int
    kind: TagKind

    @property
    def external(self) -> int:
        return external_id(self.kind, self.id)


def external_id(kind: TagKind, index: int) -> int:
    return index | CONTAINER_BIT if kind is TagKind.CONTAINER else index


def parse_external(tag: int) -> TagId:
    if tag & CONTAINER_BIT:
        return TagId(tag & ~CONTAINER_BIT, TagKind.CONTAINER)
    return TagId(tag, TagKind.OBJECT)


class TagIndex:
    """Interns external tag ids into dense 0-based indices per kind"""

    def __init__(self):
        self._dense = {TagKind.CONTAINER: {}, TagKind.OBJECT: {}}
        self._external = {TagKind.CONTAINER: [], TagKind.OBJECT: []}

    def intern(self, tag: int) -> TagId:
        kind = TagKind.CONTAINER if tag & CONTAINER_BIT else TagKind.OBJECT
        table = self._dense[kind]
        if tag not in table:
            table[tag] = len(self._external[kind])
            self._external[kind].append(tag)
        return TagId(table[tag], kind)

    def external(self, kind: TagKind, index: int) -> int:
        return self._external[kind][index]

    def count(self, kind: TagKind) -> int:
        return len(self._external[kind])

    @classmethod
    def identity(cls, n_containers: int, n_objects: int) -> 'TagIndex':
        index = cls()
        for c in range(n_containers):
            index.intern(external_id(TagKind.CONTAINER, c))
        for o in range(n_objects):
            index.intern(external_id(TagKind.OBJECT, o))
        return index


# ---------------------------------------------------------------------------
# Read rates and emission kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReadRateTable:
    """pi[r, a]: chance the reader at location r reads a tag at location a"""
    pi: np.ndarray
    clamp_eps: float = CLAMP_EPS

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim != 2 or pi.shape[0] != pi.shape[1] or pi.shape[0] < 1:
            raise ValueError(f"read-rate table must be square and non-empty, got shape {pi.shape}")
        clamped = int(((pi < self.clamp_eps) | (pi > 1.0 - self.clamp_eps)).sum())
        if clamped:
            logger.debug(f"Clamped {clamped} read rates into [{self.clamp_eps}, {1.0 - self.clamp_eps}]")
        pi = np.clip(pi, self.clamp_eps, 1.0 - self.clamp_eps)
        pi.setflags(write=False)
        object.__setattr__(self, 'pi', pi)

    @property
    def n_locations(self) -> int:
        return self.pi.shape[0]

    @cached_property
    def log_read(self) -> np.ndarray:
        return np.log(self.pi)

    @cached_property
    def log_miss(self) -> np.ndarray:
        return np.log1p(-self.pi)

    @cached_property
    def base(self) -> np.ndarray:
        """Log-probability that no reader reads a tag at each location"""
        return self.log_miss.sum(axis=0)

    @cached_property
    def delta(self) -> np.ndarray:
        """delta[r, a]: log-odds change when reader r does read a tag at a"""
        return self.log_read - self.log_miss

    @classmethod
    def uniform(cls, n_locations: int, rate: float, cross: float = 0.0,
                clamp_eps: float = CLAMP_EPS) -> 'ReadRateTable':
        pi = np.full((n_locations, n_locations), cross, dtype=float)
        np.fill_diagonal(pi, rate)
        return cls(pi, clamp_eps)

    @classmethod
    def block_diagonal(cls, tables: Sequence['ReadRateTable']) -> 'ReadRateTable':
        """Combine per-site tables into one table over all sites' locations"""
        n = sum(t.n_locations for t in tables)
        pi = np.zeros((n, n))
        offset = 0
        for table in tables:
            m = table.n_locations
            pi[offset:offset + m, offset:offset + m] = table.pi
            offset += m
        return cls(pi, tables[0].clamp_eps)


def emission_log_prob(pi_entry: float, read: bool) -> float:
    """Log-probability of one binary reading given an already clamped rate"""
    return float(np.log(pi_entry) if read else np.log1p(-pi_entry))


# ---------------------------------------------------------------------------
# Interval helpers (per-tag observation scopes)
# ---------------------------------------------------------------------------

def normalize_intervals(intervals: Iterable[Interval]) -> Tuple[Interval, ...]:
    merged: List[List[int]] = []
    for start, end in sorted((int(s), int(e)) for s, e in intervals if e >= s):
        if merged and start <= merged[-1][1] + 1:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return tuple((s, e) for s, e in merged)


def intersect_intervals(a: Sequence[Interval], b: Sequence[Interval]) -> Tuple[Interval, ...]:
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        lo, hi = max(a[i][0], b[j][0]), min(a[i][1], b[j][1])
        if lo <= hi:
            out.append((lo, hi))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return tuple(out)


def intervals_contain(intervals: Sequence[Interval], times: np.ndarray) -> np.ndarray:
    times = np.asarray(times)
    if not intervals:
        return np.zeros(times.shape, dtype=bool)
    starts = np.array([s for s, _ in intervals])
    ends = np.array([e for _, e in intervals])
    idx = np.searchsorted(starts, times, side='right') - 1
    ok = idx >= 0
    result = np.zeros(times.shape, dtype=bool)
    result[ok] = times[ok] <= ends[idx[ok]]
    return result


def interval_length(intervals: Sequence[Interval]) -> int:
    return sum(e - s + 1 for s, e in intervals)


def coverage(interval_lists: Iterable[Sequence[Interval]], t_begin: int, t_end: int):
    """Piecewise-constant count of how many scopes cover each epoch.

    Returns (bounds, k) where k[i] holds on [bounds[i], bounds[i+1]).
    """
    starts, stops = [], []
    for intervals in interval_lists:
        for s, e in intervals:
            starts.append(s)
            stops.append(e + 1)
    bounds = np.unique(np.concatenate([[t_begin, t_end + 1], starts, stops]).astype(np.int64))
    change = np.zeros(len(bounds), dtype=np.int64)
    np.add.at(change, np.searchsorted(bounds, np.asarray(starts, dtype=np.int64)), 1)
    np.add.at(change, np.searchsorted(bounds, np.asarray(stops, dtype=np.int64)), -1)
    return bounds, np.cumsum(change)[:-1]


# ---------------------------------------------------------------------------
# Observation history
# ---------------------------------------------------------------------------

def _dedup_reads(reads, n_tags: int, n_locations: int, t_begin: int, t_end: int, label: str):
    reads = np.asarray(reads, dtype=np.int64).reshape(-1, 3)
    if len(reads):
        t, r, tag = reads[:, 0], reads[:, 1], reads[:, 2]
        bad = (t < t_begin) | (t > t_end) | (r < 0) | (r >= n_locations) | (tag < 0) | (tag >= n_tags)
        if bad.any():
            raise ValueError(f"{label} reading out of bounds: {reads[bad][0].tolist()}")
        order = np.lexsort((r, t, tag))
        reads = reads[order]
        keep = np.ones(len(reads), dtype=bool)
        keep[1:] = np.any(reads[1:] != reads[:-1], axis=1)
        reads = reads[keep]
    reads.setflags(write=False)
    return reads


def _in_scope(reads: np.ndarray, scopes: Mapping[int, Tuple[Interval, ...]]) -> np.ndarray:
    """Drop readings of scoped tags that fall outside their scope"""
    if not scopes or not len(reads):
        return reads
    keep = np.ones(len(reads), dtype=bool)
    tags = reads[:, 2]
    for tag, intervals in scopes.items():
        lo, hi = np.searchsorted(tags, [tag, tag + 1])
        if hi > lo:
            keep[lo:hi] = intervals_contain(intervals, reads[lo:hi, 0])
    if keep.all():
        return reads
    out = reads[keep]
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ObservationHistory:
    """Sparse binary reading tables over epochs [t_begin, t_end].

    Reads are (t, r, tag) triples sorted by (tag, t, r). Optional scopes limit
    the epochs over which a tag counts as observed; a tag without a scope is
    observed over the whole range.
    """
    t_begin: int
    t_end: int
    n_locations: int
    n_containers: int
    n_objects: int
    container_reads: np.ndarray
    object_reads: np.ndarray
    container_scopes: Mapping[int, Tuple[Interval, ...]] = field(default_factory=dict)
    object_scopes: Mapping[int, Tuple[Interval, ...]] = field(default_factory=dict)

    @classmethod
    def from_reads(cls, t_begin: int, t_end: int, n_locations: int, n_containers: int,
                   n_objects: int, container_reads=(), object_reads=(),
                   container_scopes=None, object_scopes=None) -> 'ObservationHistory':
        span = ((int(t_begin), int(t_end)),)
        container_scopes = {int(k): intersect_intervals(normalize_intervals(v), span)
                            for k, v in (container_scopes or {}).items()}
        object_scopes = {int(k): intersect_intervals(normalize_intervals(v), span)
                         for k, v in (object_scopes or {}).items()}
        return cls(
            int(t_begin), int(t_end), int(n_locations), int(n_containers), int(n_objects),
            _in_scope(_dedup_reads(container_reads, n_containers, n_locations, t_begin, t_end,
                                   'container'), container_scopes),
            _in_scope(_dedup_reads(object_reads, n_objects, n_locations, t_begin, t_end,
                                   'object'), object_scopes),
            container_scopes, object_scopes,
        )

    @property
    def n_epochs(self) -> int:
        return max(0, self.t_end - self.t_begin + 1)

    @property
    def is_empty(self) -> bool:
        return self.n_epochs == 0

    def container_scope(self, c: int) -> Tuple[Interval, ...]:
        return self.container_scopes.get(c, ((self.t_begin, self.t_end),))

    def object_scope(self, o: int) -> Tuple[Interval, ...]:
        return self.object_scopes.get(o, ((self.t_begin, self.t_end),))

    def observed_objects(self) -> np.ndarray:
        return np.unique(self.object_reads[:, 2])

    def observed_containers(self) -> np.ndarray:
        return np.unique(self.container_reads[:, 2])

    def reads_of(self, kind: TagKind, index: int) -> np.ndarray:
        reads = self.container_reads if kind is TagKind.CONTAINER else self.object_reads
        lo, hi = np.searchsorted(reads[:, 2], [index, index + 1])
        return reads[lo:hi]

    def with_reads(self, container_reads, object_reads, container_scopes=None,
                   object_scopes=None, t_begin=None, t_end=None) -> 'ObservationHistory':
        return ObservationHistory.from_reads(
            self.t_begin if t_begin is None else t_begin,
            self.t_end if t_end is None else t_end,
            self.n_locations, self.n_containers, self.n_objects,
            container_reads, object_reads,
            self.container_scopes if container_scopes is None else container_scopes,
            self.object_scopes if object_scopes is None else object_scopes,
        )

    def restrict(self, t_begin: int, t_end: int) -> 'ObservationHistory':
        """Keep only epochs in [t_begin, t_end]; scopes are clipped to match"""
        window = ((t_begin, t_end),)
        c_mask = (self.container_reads[:, 0] >= t_begin) & (self.container_reads[:, 0] <= t_end)
        o_mask = (self.object_reads[:, 0] >= t_begin) & (self.object_reads[:, 0] <= t_end)
        return ObservationHistory.from_reads(
            t_begin, t_end, self.n_locations, self.n_containers, self.n_objects,
            self.container_reads[c_mask], self.object_reads[o_mask],
            {c: intersect_intervals(s, window) for c, s in self.container_scopes.items()},
            {o: intersect_intervals(s, window) for o, s in self.object_scopes.items()},
        )


# ---------------------------------------------------------------------------
# Containment
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ContainmentMap:
    """assignment[o] = container index, or NONE"""
    assignment: np.ndarray
    n_containers: int

    def __post_init__(self):
        assignment = np.array(self.assignment, dtype=np.int64)
        if len(assignment) and (assignment.min() < NONE or assignment.max() >= self.n_containers):
            raise ValueError("containment assigns an object to an unknown container")
        assignment.setflags(write=False)
        object.__setattr__(self, 'assignment', assignment)

    @classmethod
    def empty(cls, n_objects: int, n_containers: int) -> 'ContainmentMap':
        return cls(np.full(n_objects, NONE), n_containers)

    @classmethod
    def from_dict(cls, mapping: Mapping[int, int], n_objects: int, n_containers: int) -> 'ContainmentMap':
        assignment = np.full(n_objects, NONE)
        for o, c in mapping.items():
            assignment[o] = NONE if c is None else c
        return cls(assignment, n_containers)

    @property
    def n_objects(self) -> int:
        return len(self.assignment)

    def container_of(self, o: int) -> int:
        return int(self.assignment[o])

    @cached_property
    def _members(self) -> Dict[int, np.ndarray]:
        assigned = np.flatnonzero(self.assignment != NONE)
        containers = self.assignment[assigned]
        order = np.argsort(containers, kind='stable')
        assigned, containers = assigned[order], containers[order]
        keys, starts = np.unique(containers, return_index=True)
        bounds = list(starts) + [len(assigned)]
        return {int(c): assigned[bounds[i]:bounds[i + 1]] for i, c in enumerate(keys)}

    def members(self, c: int) -> np.ndarray:
        return self._members.get(c, np.empty(0, dtype=np.int64))

    def with_assignment(self, o: int, c: int) -> 'ContainmentMap':
        assignment = self.assignment.copy()
        assignment[o] = c
        return ContainmentMap(assignment, self.n_containers)

    def as_dict(self) -> Dict[int, int]:
        return {o: int(c) for o, c in enumerate(self.assignment) if c != NONE}

    def __eq__(self, other):
        if not isinstance(other, ContainmentMap):
            return NotImplemented
        return self.n_containers == other.n_containers and np.array_equal(self.assignment, other.assignment)

    def __hash__(self):
        return hash((self.n_containers, self.assignment.tobytes()))


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Timeline:
    """Step function: values[i] holds from times[i] until the next change"""
    times: np.ndarray
    values: np.ndarray

    def at(self, t) -> np.ndarray:
        t = np.asarray(t)
        idx = np.searchsorted(self.times, t, side='right') - 1
        out = np.where(idx >= 0, self.values[np.maximum(idx, 0)], NONE)
        return out if out.ndim else int(out)


@dataclass(frozen=True)
class ChangePoint:
    t: int
    object: int
    old_container: int
    new_container: int


@dataclass(frozen=True)
class GroundTruth:
    """True locations and containment as change logs.

    Object locations are derived from their container's location, so an
    object always sits with its container; an object without a container
    uses its own location timeline (NONE when it has left the system).
    """
    container_location: Mapping[int, Timeline]
    object_container: Mapping[int, Timeline]
    object_location: Mapping[int, Timeline] = field(default_factory=dict)
    change_points: Tuple[ChangePoint, ...] = ()
    locations_per_site: int = 0
    flags: Mapping[str, float] = field(default_factory=dict)

    def container_location_at(self, c: int, t) -> int:
        timeline = self.container_location.get(c)
        return NONE if timeline is None else timeline.at(t)

    def container_at(self, o: int, t) -> int:
        timeline = self.object_container.get(o)
        return NONE if timeline is None else timeline.at(t)

    def object_location_at(self, o: int, t: int) -> int:
        c = self.container_at(o, t)
        if c != NONE:
            return self.container_location_at(c, t)
        own = self.object_location.get(o)
        return NONE if own is None else own.at(t)

    def true_location(self, tag: TagId, t: int) -> int:
        if tag.kind is TagKind.CONTAINER:
            return self.container_location_at(tag.id, t)
        return self.object_location_at(tag.id, t)

    def site_of(self, location: int) -> int:
        if location == NONE:
            return NONE
        return location // self.locations_per_site if self.locations_per_site else 0

    def object_site_at(self, o: int, t: int) -> int:
        return self.site_of(self.object_location_at(o, t))

    @property
    def objects(self) -> List[int]:
        return sorted(self.object_container)


class GroundTruthRecorder:
    """Accumulates change events, then freezes them into a GroundTruth"""

    def __init__(self, locations_per_site: int = 0):
        self.locations_per_site = locations_per_site
        self._container_location: Dict[int, List[Tuple[int, int]]] = {}
        self._object_container: Dict[int, List[Tuple[int, int]]] = {}
        self._object_location: Dict[int, List[Tuple[int, int]]] = {}
        self.change_points: List[ChangePoint] = []
        self.flags: Dict[str, float] = {}

    @staticmethod
    def _append(log: Dict[int, List[Tuple[int, int]]], key: int, t: int, value: int):
        entries = log.setdefault(key, [])
        if entries and entries[-1][0] == t:
            entries[-1] = (t, value)
        elif not entries or entries[-1][1] != value:
            entries.append((t, value))

    def container_moved(self, t: int, c: int, location: int):
        self._append(self._container_location, c, t, location)

    def object_contained(self, t: int, o: int, c: int):
        self._append(self._object_container, o, t, c)

    def object_moved(self, t: int, o: int, location: int):
        self._append(self._object_location, o, t, location)

    def change(self, t: int, o: int, old: int, new: int):
        self.change_points.append(ChangePoint(t, o, old, new))

    @staticmethod
    def _freeze(log):
        return {k: Timeline(np.array([t for t, _ in v], dtype=np.int64),
                            np.array([x for _, x in v], dtype=np.int64))
                for k, v in log.items()}

    def build(self) -> GroundTruth:
        return GroundTruth(
            self._freeze(self._container_location),
            self._freeze(self._object_container),
            self._freeze(self._object_location),
            tuple(sorted(self.change_points, key=lambda cp: (cp.t, cp.object))),
            self.locations_per_site,
            dict(self.flags),
        )


# ---------------------------------------------------------------------------
# Emission tables and the per-container likelihood kernel
# ---------------------------------------------------------------------------

class _TagEvidence:
    """Per-tag read epochs and summed log-odds rows, grouped by tag"""

    def __init__(self, reads: np.ndarray, n_tags: int, rates: ReadRateTable, t_begin: int, span: int):
        if len(reads):
            key = reads[:, 2] * span + (reads[:, 0] - t_begin)
            pairs, inverse = np.unique(key, return_inverse=True)
            rows = np.zeros((len(pairs), rates.n_locations))
            np.add.at(rows, inverse, rates.delta[reads[:, 1]])
            tags = pairs // span
            self.times = pairs % span + t_begin
        else:
            tags = np.empty(0, dtype=np.int64)
            rows = np.zeros((0, rates.n_locations))
            self.times = np.empty(0, dtype=np.int64)
        self.rows = rows
        self.ptr = np.searchsorted(tags, np.arange(n_tags + 1))

    def of(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = self.ptr[index], self.ptr[index + 1]
        return self.times[lo:hi], self.rows[lo:hi]


class EmissionTables:
    """Precomputed sparse emission evidence for one history and rate table"""

    def __init__(self, history: ObservationHistory, rates: ReadRateTable):
        if history.n_locations != rates.n_locations:
            raise ValueError(f"history has {history.n_locations} locations, "
                             f"rates table has {rates.n_locations}")
        self.history = history
        self.rates = rates
        span = history.n_epochs + 1
        self.containers = _TagEvidence(history.container_reads, history.n_containers,
                                       rates, history.t_begin, span)
        self.objects = _TagEvidence(history.object_reads, history.n_objects,
                                    rates, history.t_begin, span)
        self.log_prior = -np.log(rates.n_locations)
        self._defaults: Dict[int, Tuple[np.ndarray, float]] = {}

    def default(self, k: int) -> Tuple[np.ndarray, float]:
        """(posterior row, log normalizer) for an epoch with k silent tags"""
        if k not in self._defaults:
            logits = k * self.rates.base
            norm = logsumexp(logits)
            self._defaults[k] = (np.exp(logits - norm), float(norm + self.log_prior))
        return self._defaults[k]


@dataclass
class ContainerTerms:
    """Log-space E-step quantities for one container under one member set"""
    times: np.ndarray          # epochs where the container or a member was read
    log_q: np.ndarray          # normalized log posterior rows at those epochs
    k_events: np.ndarray       # scope coverage at those epochs
    bounds: np.ndarray         # coverage segment boundaries
    k_segments: np.ndarray     # coverage per segment
    silent: np.ndarray         # non-event epochs per segment
    log_likelihood: float


def container_terms(tables: EmissionTables, c: int, members: Sequence[int]) -> ContainerTerms:
    history = tables.history
    times_c, rows_c = tables.containers.of(c)
    parts_t, parts_d = [times_c], [rows_c]
    scopes = [history.container_scope(c)]
    for o in members:
        times_o, rows_o = tables.objects.of(o)
        parts_t.append(times_o)
        parts_d.append(rows_o)
        scopes.append(history.object_scope(o))

    all_t = np.concatenate(parts_t)
    times, inverse = np.unique(all_t, return_inverse=True)
    summed = np.zeros((len(times), tables.rates.n_locations))
    np.add.at(summed, inverse, np.concatenate(parts_d))

    bounds, k_segments = coverage(scopes, history.t_begin, history.t_end)
    segment = np.searchsorted(bounds, times, side='right') - 1
    k_events = k_segments[segment]

    logits = k_events[:, None] * tables.rates.base + summed
    norms = logsumexp(logits, axis=1) if len(times) else np.empty(0)
    log_q = logits - norms[:, None]

    silent = np.diff(bounds) - np.bincount(segment, minlength=len(k_segments))
    default_norms = np.array([tables.default(int(k))[1] for k in k_segments])
    log_likelihood = float(np.sum(norms + tables.log_prior) + np.dot(silent, default_norms))
    return ContainerTerms(times, log_q, k_events, bounds, k_segments, silent, log_likelihood)


def log_likelihood(history: ObservationHistory, containment: ContainmentMap,
                   rates: ReadRateTable, tables: Optional[EmissionTables] = None) -> float:
    """L(C): sum over epochs and containers of the log marginal of the readings"""
    if history.is_empty or history.n_containers == 0:
        return 0.0
    tables = tables or EmissionTables(history, rates)
    terms = [container_terms(tables, c, containment.members(c)).log_likelihood
             for c in range(history.n_containers)]
    return float(np.sum(terms))


# ---------------------------------------------------------------------------
# Sampling from the model
# ---------------------------------------------------------------------------

def sample_trace(rates: ReadRateTable, containment: ContainmentMap, n_epochs: int, seed: int,
                 locations: Optional[Sequence[int]] = None) -> Tuple[ObservationHistory, GroundTruth]:
    """Draw a trace from the model: uniform container locations, independent reads.

    `locations` restricts the uniform draw to a subset of reader locations.
    """
    if n_epochs < 1:
        raise ValueError("n_epochs must be >= 1")
    rng = np.random.default_rng(seed)
    n_loc = rates.n_locations
    choices = np.arange(n_loc) if locations is None else np.asarray(locations)
    n_c, n_o = containment.n_containers, containment.n_objects

    container_loc = rng.choice(choices, size=(n_epochs, n_c))
    object_loc = rng.choice(choices, size=(n_epochs, n_o))
    assigned = containment.assignment != NONE
    object_loc[:, assigned] = container_loc[:, containment.assignment[assigned]]

    readers = np.arange(n_loc)[None, :, None]

    def draw(true_loc):
        p = rates.pi[readers, true_loc[:, None, :]]
        t, r, tag = np.nonzero(rng.random(p.shape) < p)
        return np.column_stack([t, r, tag])

    c_reads, o_reads = draw(container_loc), draw(object_loc)
    history = ObservationHistory.from_reads(0, n_epochs - 1, n_loc, n_c, n_o, c_reads, o_reads)

    recorder = GroundTruthRecorder()
    for c in range(n_c):
        for t in range(n_epochs):
            recorder.container_moved(t, c, int(container_loc[t, c]))
    for o in range(n_o):
        recorder.object_contained(0, o, containment.container_of(o))
        if not assigned[o]:
            for t in range(n_epochs):
                recorder.object_moved(t, o, int(object_loc[t, o]))
    return history, recorder.build()
