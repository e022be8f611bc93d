#!/usr/bin/env python3
"""
RFINFER: EM inference of containment and location over sparse RFID readings

The E-step computes, per container, the posterior of its location given its
own readings and those of its current members. The M-step scores every
candidate (container, object) pair by expected co-location evidence and
reassigns each object to its best candidate. Containers whose member set did
not change since an earlier iteration reuse their cached posterior and
weights.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from core_model import (
    NONE,
    ContainerTerms,
    ContainmentMap,
    EmissionTables,
    ObservationHistory,
    ReadRateTable,
    container_terms,
    intervals_contain,
)

logger = logging.getLogger('rftrack.rfinfer')

CandidateSet = Dict[int, np.ndarray]

# smallest likelihood gain that counts as an improving reassignment
CLIMB_MIN_GAIN = 1e-9


class ContainerPosterior:
    """q_tc over all epochs for one container, stored sparsely"""

    def __init__(self, terms: ContainerTerms, tables: EmissionTables):
        self.terms = terms
        self.tables = tables
        base = tables.rates.base
        self.q_events = np.exp(terms.log_q)
        self.event_qb = self.q_events @ base
        self.default_rows = np.array([tables.default(int(k))[0] for k in terms.k_segments]
                                     ).reshape(len(terms.k_segments), len(base))
        self.segment_qb = self.default_rows @ base

    @property
    def log_likelihood(self) -> float:
        return self.terms.log_likelihood

    def _locate(self, times: np.ndarray):
        times = np.asarray(times, dtype=np.int64)
        event_times = self.terms.times
        segment = np.searchsorted(self.terms.bounds, times, side='right') - 1
        if len(event_times) == 0:
            return np.zeros(times.shape, dtype=np.int64), np.zeros(times.shape, dtype=bool), segment
        idx = np.minimum(np.searchsorted(event_times, times), len(event_times) - 1)
        return idx, event_times[idx] == times, segment

    def rows(self, times: np.ndarray) -> np.ndarray:
        idx, hit, segment = self._locate(times)
        out = self.default_rows[segment].copy()
        out[hit] = self.q_events[idx[hit]]
        return out

    def q_base(self, times: np.ndarray) -> np.ndarray:
        idx, hit, segment = self._locate(times)
        out = self.segment_qb[segment].copy()
        out[hit] = self.event_qb[idx[hit]]
        return out

    def last_informed(self, t: int) -> Tuple[int, int]:
        """(epoch, argmax location) of the latest read epoch at or before t"""
        i = np.searchsorted(self.terms.times, t, side='right') - 1
        if i < 0:
            return NONE, NONE
        return int(self.terms.times[i]), int(np.argmax(self.terms.log_q[i]))

    def track(self, times: np.ndarray) -> np.ndarray:
        """last_informed location for each epoch in times; NONE before the first read"""
        times = np.asarray(times, dtype=np.int64)
        if len(self.terms.times) == 0:
            return np.full(times.shape, NONE, dtype=np.int64)
        best = np.argmax(self.terms.log_q, axis=1)
        i = np.searchsorted(self.terms.times, times, side='right') - 1
        return np.where(i >= 0, best[np.maximum(i, 0)], NONE)


@dataclass
class PosteriorTable:
    """q_tc(a) for every container; events stored explicitly, quiet epochs by coverage"""
    containers: Dict[int, ContainerPosterior]
    log_likelihood: float

    def distribution(self, t: int, c: int) -> np.ndarray:
        return self.containers[c].rows(np.array([t]))[0]

    def location(self, t: int, c: int) -> int:
        return int(np.argmax(self.distribution(t, c)))


@dataclass
class WeightTable:
    """w_co for candidate pairs only"""
    weights: Dict[int, Dict[int, float]]
    n_objects: int
    n_containers: int

    def get(self, c: int, o: int, default: Optional[float] = None) -> Optional[float]:
        return self.weights.get(o, {}).get(c, default)

    def pairs(self):
        for o in sorted(self.weights):
            for c in sorted(self.weights[o]):
                yield c, o, self.weights[o][c]

    def plus(self, priors: Mapping[int, Mapping[int, float]]) -> 'WeightTable':
        """Add collapsed weights carried over from earlier sites.

        A candidate the prior never saw gets the prior's lowest weight.
        """
        combined = {o: dict(ws) for o, ws in self.weights.items()}
        for o, prior in priors.items():
            if o not in combined or not prior:
                continue
            floor = min(prior.values())
            for c in combined[o]:
                combined[o][c] += prior.get(c, floor)
        return WeightTable(combined, self.n_objects, self.n_containers)


@dataclass
class EvidenceSeries:
    """Point evidence e_co(t) of one object at the epochs in its scope.

    e[i, j] is the evidence for candidates[j] at epoch times[i]. Epochs
    outside the scope carry no evidence and are not stored, so prefix sums
    over the rows equal prefix sums over the dense series.
    """
    object: int
    candidates: np.ndarray
    times: np.ndarray
    e: np.ndarray
    read_times: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def n_epochs(self) -> int:
        return len(self.times)

    @property
    def n_reads(self) -> int:
        return len(self.read_times)

    @property
    def t0(self) -> int:
        return int(self.times[0])

    @property
    def t1(self) -> int:
        return int(self.times[-1])

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.e, axis=0)

    @property
    def weights(self) -> Dict[int, float]:
        # per column so a weight does not depend on which other candidates are present
        return {int(c): float(np.ascontiguousarray(self.e[:, j]).sum())
                for j, c in enumerate(self.candidates)}

    def window(self, t_begin: int, t_end: int) -> 'EvidenceSeries':
        keep = (self.times >= t_begin) & (self.times <= t_end)
        reads = (self.read_times >= t_begin) & (self.read_times <= t_end)
        return EvidenceSeries(self.object, self.candidates, self.times[keep], self.e[keep],
                              self.read_times[reads])

    def since(self, t: int) -> 'EvidenceSeries':
        return self.window(t, np.iinfo(np.int64).max)

    def runs(self):
        """Contiguous epoch runs as (times, e) pairs"""
        if self.n_epochs == 0:
            return
        cuts = np.flatnonzero(np.diff(self.times) > 1) + 1
        for idx in np.split(np.arange(self.n_epochs), cuts):
            yield self.times[idx], self.e[idx]


@dataclass
class InferenceResult:
    containment: ContainmentMap
    posterior: PosteriorTable
    weights: WeightTable
    candidates: CandidateSet
    iterations: int
    converged: bool
    log_likelihood_trace: List[float]
    tables: EmissionTables
    wall_time_s: float = 0.0
    _evidence: Dict[int, EvidenceSeries] = field(default_factory=dict, repr=False)

    @property
    def final_log_likelihood(self) -> float:
        return self.log_likelihood_trace[-1]

    def evidence(self, o: int) -> Optional[EvidenceSeries]:
        """Point evidence for one object under the final posterior, built on demand"""
        if o not in self._evidence:
            cands = self.candidates.get(o)
            if cands is None or len(cands) == 0:
                return None
            self._evidence[o] = point_evidence(self.tables, self.posterior, o, cands)
        return self._evidence[o]

    def container_location(self, c: int, t: int) -> int:
        return self.posterior.containers[c].last_informed(t)[1]

    def object_location(self, o: int, t: int) -> Tuple[int, bool]:
        """(location, confident) for object o at epoch t.

        Contained objects take their container's most recent informed location.
        An object without a container is placed by its own latest readings and
        flagged low-confidence.
        """
        c = self.containment.container_of(o)
        if c != NONE:
            return self.container_location(c, t), True
        times, rows = self.tables.objects.of(o)
        i = np.searchsorted(times, t, side='right') - 1
        if i < 0:
            return NONE, False
        return int(np.argmax(self.tables.rates.base + rows[i])), False

    def object_track(self, o: int, times: np.ndarray) -> np.ndarray:
        """object_location over many epochs at once, without the confidence flag"""
        c = self.containment.container_of(o)
        if c != NONE:
            return self.posterior.containers[c].track(times)
        own_t, rows = self.tables.objects.of(o)
        times = np.asarray(times, dtype=np.int64)
        if len(own_t) == 0:
            return np.full(times.shape, NONE, dtype=np.int64)
        best = np.argmax(self.tables.rates.base + rows, axis=1)
        i = np.searchsorted(own_t, times, side='right') - 1
        return np.where(i >= 0, best[np.maximum(i, 0)], NONE)

    def event_rows(self, t: int, objects=None):
        """(time, object, location, container) records at epoch t"""
        objects = range(self.containment.n_objects) if objects is None else objects
        for o in objects:
            location, _ = self.object_location(o, t)
            yield t, o, location, self.containment.container_of(o)


# ---------------------------------------------------------------------------
# Co-location counting and candidates
# ---------------------------------------------------------------------------

def _colocations(history: ObservationHistory, object_mask: Optional[np.ndarray] = None) -> pd.DataFrame:
    """Counts of (object, container) read by the same reader in the same epoch"""
    obj = history.object_reads if object_mask is None else history.object_reads[object_mask]
    objects = pd.DataFrame({'key': obj[:, 0] * history.n_locations + obj[:, 1], 'o': obj[:, 2]})
    cont = history.container_reads
    containers = pd.DataFrame({'key': cont[:, 0] * history.n_locations + cont[:, 1], 'c': cont[:, 2]})
    pairs = objects.merge(containers, on='key')
    if pairs.empty:
        return pd.DataFrame({'o': pd.Series(dtype=np.int64), 'c': pd.Series(dtype=np.int64),
                             'n': pd.Series(dtype=np.int64)})
    return pairs.groupby(['o', 'c']).size().reset_index(name='n')


def _top_k(counts: pd.DataFrame, k: int) -> pd.DataFrame:
    ordered = counts.sort_values(['o', 'n', 'c'], ascending=[True, False, True])
    return ordered.groupby('o').head(k)


def initial_containment(history: ObservationHistory) -> ContainmentMap:
    """Each object starts in its most co-located container; ties to the smallest id"""
    counts = _top_k(_colocations(history), 1)
    return ContainmentMap.from_dict(dict(zip(counts['o'], counts['c'])),
                                    history.n_objects, history.n_containers)


def build_candidates(history: ObservationHistory, first_window: int, recent_window: int,
                     k: int) -> CandidateSet:
    """Top-k co-located containers in each object's first epochs and in the recent window"""
    if k < 1:
        raise ValueError("candidate count k must be >= 1")
    reads = history.object_reads
    if len(reads) == 0:
        return {}
    first_seen = pd.Series(reads[:, 0]).groupby(reads[:, 2]).transform('min').to_numpy()
    early = reads[:, 0] < first_seen + first_window
    recent = reads[:, 0] > history.t_end - recent_window

    picked = pd.concat([_top_k(_colocations(history, early), k),
                        _top_k(_colocations(history, recent), k)])
    if picked.empty:
        return {}
    merged = picked.groupby(['o', 'c'])['n'].sum().reset_index()
    merged = merged.sort_values(['o', 'n', 'c'], ascending=[True, False, True])
    return {int(o): group['c'].to_numpy(dtype=np.int64) for o, group in merged.groupby('o')}


def admit(candidates: CandidateSet, extra: Mapping[int, int]) -> CandidateSet:
    """Add one container per object (e.g. its current container) to its candidates"""
    out = dict(candidates)
    for o, c in extra.items():
        if c == NONE:
            continue
        current = out.get(o, np.empty(0, dtype=np.int64))
        if c not in current:
            out[o] = np.append(current, np.int64(c))
    return out


# ---------------------------------------------------------------------------
# E-step and M-step
# ---------------------------------------------------------------------------

def point_evidence(tables: EmissionTables, posterior: PosteriorTable, o: int,
                   candidates: np.ndarray) -> EvidenceSeries:
    """e_co(t) = sum_a q_tc(a) * log p(y_to | a) for every candidate c"""
    scope = tables.history.object_scope(o)
    candidates = np.asarray(candidates, dtype=np.int64)
    times = np.concatenate([np.arange(s, e + 1) for s, e in scope]).astype(np.int64) \
        if scope else np.empty(0, dtype=np.int64)
    read_t, read_rows = tables.objects.of(o)
    inside = intervals_contain(scope, read_t)
    read_t, read_rows = read_t[inside], read_rows[inside]
    positions = np.searchsorted(times, read_t)

    e = np.zeros((len(times), len(candidates)))
    for j, c in enumerate(candidates):
        cp = posterior.containers[int(c)]
        e[:, j] = cp.q_base(times)
        if len(read_t):
            e[positions, j] += np.einsum('ij,ij->i', cp.rows(read_t), read_rows)
    return EvidenceSeries(o, candidates, times, e, read_t)


class RFInfer:
    """EM engine bound to one history; caches per-container work across iterations"""

    def __init__(self, history: ObservationHistory, rates: ReadRateTable, memoize: bool = True):
        self.history = history
        self.rates = rates
        self.memoize = memoize
        self.tables = EmissionTables(history, rates)
        self._posteriors: Dict[Tuple[int, bytes], ContainerPosterior] = {}
        self._weights: Dict[Tuple[int, int, bytes], float] = {}
        self.cache_hits = 0

    @staticmethod
    def _key(members: np.ndarray) -> bytes:
        return np.asarray(members, dtype=np.int64).tobytes()

    def container_posterior(self, c: int, members: np.ndarray) -> ContainerPosterior:
        key = (c, self._key(members))
        if self.memoize and key in self._posteriors:
            self.cache_hits += 1
            return self._posteriors[key]
        posterior = ContainerPosterior(container_terms(self.tables, c, members), self.tables)
        if self.memoize:
            self._posteriors[key] = posterior
        return posterior

    def e_step(self, containment: ContainmentMap) -> PosteriorTable:
        containers = {c: self.container_posterior(c, containment.members(c))
                      for c in range(self.history.n_containers)}
        if self.history.is_empty:
            total = 0.0
        else:
            total = float(np.sum([containers[c].log_likelihood for c in range(self.history.n_containers)]))
        return PosteriorTable(containers, total)

    def m_step_weights(self, posterior: PosteriorTable, containment: ContainmentMap,
                       candidates: CandidateSet) -> WeightTable:
        weights: Dict[int, Dict[int, float]] = {}
        for o in sorted(candidates):
            cands = candidates[o]
            if len(cands) == 0:
                continue
            row, missing = {}, []
            for c in cands:
                key = (o, int(c), self._key(containment.members(int(c))))
                if self.memoize and key in self._weights:
                    row[int(c)] = self._weights[key]
                else:
                    missing.append(int(c))
            if missing:
                series = point_evidence(self.tables, posterior, o, np.array(missing))
                for c, w in series.weights.items():
                    row[c] = w
                    if self.memoize:
                        self._weights[(o, c, self._key(containment.members(c)))] = w
            weights[o] = {c: row[c] for c in sorted(row)}
        return WeightTable(weights, self.history.n_objects, self.history.n_containers)

    def _container_log_likelihood(self, c: int, members) -> float:
        return self.container_posterior(c, np.array(sorted(members), dtype=np.int64)).log_likelihood

    def climb(self, containment: ContainmentMap, candidates: CandidateSet) -> Tuple[ContainmentMap, int]:
        """Move single objects between candidate containers while L strictly rises.

        Only the two containers touched by a move are rescored. Objects
        without a container stay unassigned: adding a member never raises L.
        """
        assignment = containment.assignment.copy()
        members = {c: set(containment.members(c).tolist()) for c in range(containment.n_containers)}
        score = {c: self._container_log_likelihood(c, members[c]) for c in members}
        moves = 0
        improved = True
        while improved:
            improved = False
            for o in sorted(candidates):
                current = int(assignment[o])
                if current == NONE:
                    continue
                for c in map(int, candidates[o]):
                    if c == current:
                        continue
                    left, joined = members[current] - {o}, members[c] | {o}
                    l_left = self._container_log_likelihood(current, left)
                    l_joined = self._container_log_likelihood(c, joined)
                    if l_left + l_joined - score[current] - score[c] > CLIMB_MIN_GAIN:
                        members[current], members[c] = left, joined
                        score[current], score[c] = l_left, l_joined
                        assignment[o] = current = c
                        moves += 1
                        improved = True
        return ContainmentMap(assignment, containment.n_containers), moves

    def run(self, init: Optional[ContainmentMap] = None, max_iters: int = 50,
            candidates: Optional[CandidateSet] = None, priors: Optional[Mapping] = None,
            candidates_k: int = 5, first_window: int = 60,
            recent_window: Optional[int] = None) -> InferenceResult:
        """EM to a fixed point, then single-object climbing, until neither moves.

        With priors the fixed point maximizes evidence plus carried weights, so
        the climbing pass on the local likelihood is skipped.
        """
        if max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        started = time.time()
        history = self.history
        if init is None:
            init = initial_containment(history)
        if candidates is None:
            recent = history.n_epochs if recent_window is None else recent_window
            candidates = build_candidates(history, first_window, recent, candidates_k)
        # the starting container must stay eligible or the likelihood could drop
        candidates = admit(candidates, init.as_dict())
        assignment = np.full(history.n_objects, NONE)
        for o, c in init.as_dict().items():
            if o in candidates:
                assignment[o] = c
        containment = ContainmentMap(assignment, history.n_containers)

        posterior = self.e_step(containment)
        trace = [posterior.log_likelihood]
        converged = False
        iterations = 0
        climbed = 0
        weights = WeightTable({}, history.n_objects, history.n_containers)
        while iterations < max_iters:
            weights = self.m_step_weights(posterior, containment, candidates)
            if priors:
                weights = weights.plus(priors)
            iterations += 1
            updated = m_step_assign(weights)
            if updated == containment:
                if priors:
                    converged = True
                    break
                updated, moves = self.climb(containment, candidates)
                if moves == 0:
                    converged = True
                    break
                climbed += moves
            containment = updated
            posterior = self.e_step(containment)
            trace.append(posterior.log_likelihood)

        if not converged:
            weights = self.m_step_weights(posterior, containment, candidates)
            if priors:
                weights = weights.plus(priors)
            logger.warning(f"EM stopped at max_iters={max_iters} without a fixed point")
        wall = time.time() - started
        logger.debug(f"EM finished: {iterations} iterations, {climbed} climbing moves, "
                     f"L={trace[-1]:.3f}, {self.cache_hits} cache hits, {wall:.2f}s")
        return InferenceResult(containment, posterior, weights, candidates, iterations,
                               converged, trace, self.tables, wall)


def e_step(history: ObservationHistory, containment: ContainmentMap,
           rates: ReadRateTable) -> PosteriorTable:
    return RFInfer(history, rates, memoize=False).e_step(containment)


def m_step_weights(history: ObservationHistory, posterior: PosteriorTable,
                   candidates: CandidateSet, rates: ReadRateTable) -> WeightTable:
    tables = next(iter(posterior.containers.values())).tables if posterior.containers \
        else EmissionTables(history, rates)
    weights = {}
    for o in sorted(candidates):
        if len(candidates[o]):
            weights[o] = point_evidence(tables, posterior, o, candidates[o]).weights
    return WeightTable(weights, history.n_objects, history.n_containers)


def m_step_assign(weights: WeightTable) -> ContainmentMap:
    """Per-object argmax of w_co; ties go to the smallest container id"""
    assignment = np.full(weights.n_objects, NONE)
    for o, row in weights.weights.items():
        best_c, best_w = NONE, -np.inf
        for c in sorted(row):
            if best_c == NONE or row[c] > best_w:
                best_c, best_w = c, row[c]
        assignment[o] = best_c
    return ContainmentMap(assignment, weights.n_containers)


def run_em(history: ObservationHistory, rates: ReadRateTable, init: Optional[ContainmentMap] = None,
           max_iters: int = 50, memoize: bool = True, **kwargs) -> InferenceResult:
    return RFInfer(history, rates, memoize=memoize).run(init, max_iters, **kwargs)
