#!/usr/bin/env python3
"""
History truncation by critical regions, and collapsed inference state

After an inference pass each object keeps only a short critical region (the
latest window where one candidate clearly beats the rest) plus the recent
history. When the object leaves a site its inference state is collapsed to
one accumulated weight per candidate container.
"""

import io
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

try:
    from evidence_scan import window_margins
except ImportError:
    from evidence_scan_py import window_margins

from core_model import (
    Interval,
    ObservationHistory,
    intersect_intervals,
    normalize_intervals,
)
from rfinfer import CandidateSet, EvidenceSeries, WeightTable

logger = logging.getLogger('rftrack.truncation')

# little-endian wire layout of one collapsed entry
ENTRY_HEADER = np.dtype([('object', '<u4'), ('n', '<u2')])
ENTRY_PAIR = np.dtype([('container', '<u4'), ('weight', '<f4')])


@dataclass(frozen=True)
class CriticalRegion:
    """Window [t_end - window, t_end]; best is the winning candidate there"""
    object: int
    t_start: int
    t_end: int
    best: int
    margin: float

    @property
    def interval(self) -> Interval:
        return self.t_start, self.t_end


@dataclass(frozen=True)
class RecentHistory:
    t_start: int
    t_end: int

    @classmethod
    def ending_at(cls, t_end: int, size: int) -> 'RecentHistory':
        return cls(t_end - size + 1, t_end)

    @property
    def interval(self) -> Interval:
        return self.t_start, self.t_end


@dataclass
class CollapsedState:
    """Per-object candidate weights; the only inference state that migrates"""
    weights: Dict[int, Dict[int, float]]
    watermark: int = 0

    def add(self, other: Mapping[int, Mapping[int, float]]) -> 'CollapsedState':
        combined = {o: dict(ws) for o, ws in self.weights.items()}
        for o, ws in other.items():
            row = combined.setdefault(o, {})
            for c, w in ws.items():
                row[c] = row.get(c, 0.0) + w
        return CollapsedState(combined, self.watermark)

    def prune(self, margin: float) -> 'CollapsedState':
        """Drop candidates trailing the object's best by more than margin"""
        pruned = {}
        for o, ws in self.weights.items():
            if not ws:
                continue
            best = max(ws.values())
            pruned[o] = {c: w for c, w in ws.items() if w >= best - margin}
        return CollapsedState(pruned, self.watermark)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        for o in sorted(self.weights):
            row = self.weights[o]
            header = np.array([(o, len(row))], dtype=ENTRY_HEADER)
            pairs = np.array(sorted(row.items()), dtype=ENTRY_PAIR) if row \
                else np.empty(0, dtype=ENTRY_PAIR)
            buf.write(header.tobytes())
            buf.write(pairs.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, watermark: int = 0) -> 'CollapsedState':
        weights, pos = {}, 0
        while pos < len(data):
            header = np.frombuffer(data, ENTRY_HEADER, count=1, offset=pos)[0]
            pos += ENTRY_HEADER.itemsize
            n = int(header['n'])
            pairs = np.frombuffer(data, ENTRY_PAIR, count=n, offset=pos)
            pos += n * ENTRY_PAIR.itemsize
            weights[int(header['object'])] = {int(c): float(w) for c, w in pairs}
        return cls(weights, watermark)

    def to_frame(self) -> pd.DataFrame:
        rows = [(o, c, w) for o in sorted(self.weights) for c, w in sorted(self.weights[o].items())]
        return pd.DataFrame(rows, columns=['object_id', 'container_id', 'weight'])


def find_critical_region(evidence: Mapping[int, EvidenceSeries], window: int, margin: float,
                         previous: Optional[Mapping[int, CriticalRegion]] = None
                         ) -> Dict[int, Optional[CriticalRegion]]:
    """Latest window [t - window, t] where best-minus-second-best >= margin.

    Windows never straddle a gap in the object's scope; a run shorter than the
    window is judged as a whole. An object with no qualifying window keeps its
    previous region, or gets None.
    """
    previous = previous or {}
    regions: Dict[int, Optional[CriticalRegion]] = {}
    for o in sorted(evidence):
        series = evidence[o]
        found = None
        if series is not None:
            for times, e in series.runs():
                margins, best = window_margins(e, window)
                qualifying = np.flatnonzero(margins >= margin)
                if len(qualifying):
                    i = int(qualifying[-1])
                    start = times[max(0, i - window)]
                    found = CriticalRegion(o, int(start), int(times[i]),
                                           int(series.candidates[best[i]]), float(margins[i]))
        old = previous.get(o)
        if found is None or (old is not None and old.t_end > found.t_end):
            found = old
        regions[o] = found
    return regions


def truncate(history: ObservationHistory, regions: Mapping[int, Optional[CriticalRegion]],
             recent: RecentHistory, candidates: Optional[CandidateSet] = None) -> ObservationHistory:
    """Keep, per object, only readings in its critical region and the recent history.

    A container keeps the recent history plus the critical regions of every
    object that lists it as a candidate.
    """
    recent_iv = (recent.interval,)
    object_scopes = {}
    container_extra: Dict[int, list] = {}
    candidates = candidates or {}
    for o in range(history.n_objects):
        cr = regions.get(o)
        keep = recent_iv + ((cr.interval,) if cr is not None else ())
        scope = intersect_intervals(history.object_scope(o), normalize_intervals(keep))
        object_scopes[o] = scope
        if cr is not None:
            for c in candidates.get(o, ()):
                container_extra.setdefault(int(c), []).append(cr.interval)
    container_scopes = {}
    for c in range(history.n_containers):
        keep = normalize_intervals(recent_iv + tuple(container_extra.get(c, ())))
        container_scopes[c] = intersect_intervals(history.container_scope(c), keep)
    truncated = history.with_reads(history.container_reads, history.object_reads,
                                   container_scopes, object_scopes)
    logger.debug(f"Truncated history to t={recent.interval[1]}: kept {len(truncated.object_reads)} "
                 f"of {len(history.object_reads)} object readings")
    return truncated


def retained_epochs(history: ObservationHistory) -> Dict[int, int]:
    return {o: sum(e - s + 1 for s, e in history.object_scope(o)) for o in range(history.n_objects)}


def collapse(weights: WeightTable, watermark: int = 0,
             objects: Optional[Iterable[int]] = None) -> CollapsedState:
    keep = set(weights.weights) if objects is None else set(objects)
    return CollapsedState({o: dict(ws) for o, ws in weights.weights.items() if o in keep}, watermark)
