#!/usr/bin/env python3
"""
File formats for traces, ground truth, rates and results

Readings, ground truth and event streams are tab-separated text keyed by
external tag ids (containers carry the kind bit). Result tables are CSV.
"""

import io
import json
import logging
import platform
from importlib import metadata
from typing import Dict, Iterable, List, Optional, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from core_model import (
    NONE,
    GroundTruth,
    GroundTruthRecorder,
    ObservationHistory,
    ReadRateTable,
    TagIndex,
    TagKind,
    external_id,
    parse_external,
)

logger = logging.getLogger('rftrack.trace_io')

PathOrBuffer = Union[str, TextIO]

TRACE_COLUMNS = ['time', 'tag_id', 'reader_id']
TRUTH_COLUMNS = ['time', 'tag_id', 'location', 'container']
EVENT_COLUMNS = ['time', 'tag_id', 'location', 'container']
CHANGE_COLUMNS = ['object_id', 't_change', 'delta', 'new_container']
ALERT_COLUMNS = ['tag_id', 't_alert', 'n_readings']
MANIFEST_PACKAGES = ('numpy', 'scipy', 'pandas', 'simpy', 'pyhcl', 'Flask', 'tornado', 'Cython')


class TraceFormatError(ValueError):
    """A trace file line that does not parse"""

    def __init__(self, source: str, line: int, message: str):
        super().__init__(f"{source}:{line}: {message}")
        self.source = source
        self.line = line


def _source_name(path: PathOrBuffer) -> str:
    return path if isinstance(path, str) else getattr(path, 'name', '<stream>')


def _read_table(path: PathOrBuffer, columns: List[str], sep: str = '\t') -> pd.DataFrame:
    source = _source_name(path)
    try:
        frame = pd.read_csv(path, sep=sep, header=None, names=columns, comment='#',
                            dtype=str, skip_blank_lines=True, keep_default_na=False)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise TraceFormatError(source, 0, str(e)) from e
    if len(frame) and frame.iloc[0, 0] == columns[0]:
        frame = frame.iloc[1:]
    numeric = frame.apply(pd.to_numeric, errors='coerce')
    bad = numeric.isna().any(axis=1)
    if bad.any():
        # +1 for 1-based lines; header rows were dropped above
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise TraceFormatError(source, int(frame.index[row]) + 1,
                               f"expected {len(columns)} numeric fields, got {frame.iloc[row].tolist()}")
    return numeric


def _write_table(frame: pd.DataFrame, path: PathOrBuffer, sep: str = '\t'):
    frame.to_csv(path, sep=sep, index=False)


# ---------------------------------------------------------------------------
# Readings
# ---------------------------------------------------------------------------

def _external_ids(tag_index: Optional[TagIndex], kind: TagKind, idx) -> np.ndarray:
    if tag_index is None:
        return np.array([external_id(kind, int(i)) for i in idx], dtype=np.int64)
    return np.array([tag_index.external(kind, int(i)) for i in idx], dtype=np.int64)


def trace_frame(history: ObservationHistory, tag_index: Optional[TagIndex] = None,
                location_offset: int = 0) -> pd.DataFrame:
    """Readings of a history as (time, tag_id, reader_id) rows sorted by time"""
    parts = []
    for kind, reads in ((TagKind.CONTAINER, history.container_reads), (TagKind.OBJECT, history.object_reads)):
        if len(reads):
            parts.append(pd.DataFrame({'time': reads[:, 0],
                                       'tag_id': _external_ids(tag_index, kind, reads[:, 2]),
                                       'reader_id': reads[:, 1] + location_offset}))
    if not parts:
        return pd.DataFrame({c: pd.Series(dtype=np.int64) for c in TRACE_COLUMNS})
    return pd.concat(parts, ignore_index=True).sort_values(TRACE_COLUMNS, kind='stable') \
        .reset_index(drop=True)


def trace_text(history: ObservationHistory, tag_index: Optional[TagIndex] = None,
               location_offset: int = 0) -> str:
    buf = io.StringIO()
    _write_table(trace_frame(history, tag_index, location_offset), buf)
    return buf.getvalue()


def write_trace(path: PathOrBuffer, history: ObservationHistory, tag_index: Optional[TagIndex] = None,
                location_offset: int = 0):
    _write_table(trace_frame(history, tag_index, location_offset), path)


def read_trace(path: PathOrBuffer, n_locations: Optional[int] = None,
               t_begin: Optional[int] = None, t_end: Optional[int] = None,
               tag_index: Optional[TagIndex] = None) -> Tuple[ObservationHistory, TagIndex]:
    frame = _read_table(path, TRACE_COLUMNS).astype(np.int64)
    tag_index = tag_index or TagIndex()
    ids = [tag_index.intern(int(t)) for t in frame['tag_id']]
    is_container = np.array([i.kind is TagKind.CONTAINER for i in ids], dtype=bool)
    dense = np.array([i.id for i in ids], dtype=np.int64)
    reads = np.column_stack([frame['time'].to_numpy(), frame['reader_id'].to_numpy(), dense]) \
        if len(frame) else np.empty((0, 3), dtype=np.int64)
    if len(frame):
        t_lo, t_hi = int(frame['time'].min()), int(frame['time'].max())
        r_hi = int(frame['reader_id'].max()) + 1
    else:
        t_lo, t_hi, r_hi = 0, -1, 0
    history = ObservationHistory.from_reads(
        t_lo if t_begin is None else t_begin, t_hi if t_end is None else t_end,
        r_hi if n_locations is None else n_locations,
        tag_index.count(TagKind.CONTAINER), tag_index.count(TagKind.OBJECT),
        reads[is_container], reads[~is_container])
    logger.info(f"Read {len(frame)} readings from {_source_name(path)}")
    return history, tag_index


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------

def truth_frame(truth: GroundTruth) -> pd.DataFrame:
    """Change log: one row whenever a tag's location or container changes"""
    rows = []
    for c, timeline in truth.container_location.items():
        for t, loc in zip(timeline.times, timeline.values):
            rows.append((int(t), external_id(TagKind.CONTAINER, c), int(loc), NONE))
    for o in truth.objects:
        own = truth.object_location.get(o)
        own_times = set(own.times.tolist()) if own is not None else set()
        for t in sorted(set(truth.object_container[o].times.tolist()) | own_times):
            location = int(own.at(t)) if own is not None else NONE
            rows.append((t, external_id(TagKind.OBJECT, o), location, int(truth.container_at(o, t))))
    frame = pd.DataFrame(rows, columns=TRUTH_COLUMNS)
    return frame.sort_values(['time', 'tag_id'], kind='stable').reset_index(drop=True)


def write_truth(path: PathOrBuffer, truth: GroundTruth):
    _write_table(truth_frame(truth), path)


def read_truth(path: PathOrBuffer, locations_per_site: int = 0) -> GroundTruth:
    """Object rows carry the container (and, when set, an own location); NONE is -1.

    A container change of an object that already had one is a change point.
    """
    frame = _read_table(path, TRUTH_COLUMNS).astype(np.int64)
    recorder = GroundTruthRecorder(locations_per_site)
    held: Dict[int, int] = {}
    located = set()
    for t, tag, location, container in frame.itertuples(index=False):
        tag_id = parse_external(int(tag))
        if tag_id.kind is TagKind.CONTAINER:
            recorder.container_moved(int(t), tag_id.id, int(location))
        else:
            previous = held.get(tag_id.id, NONE)
            if previous != NONE and previous != container:
                recorder.change(int(t), tag_id.id, previous, int(container))
            held[tag_id.id] = int(container)
            recorder.object_contained(int(t), tag_id.id, int(container))
            if location != NONE or tag_id.id in located:
                located.add(tag_id.id)
                recorder.object_moved(int(t), tag_id.id, int(location))
    return recorder.build()


# ---------------------------------------------------------------------------
# Read rates
# ---------------------------------------------------------------------------

def write_rates(path: PathOrBuffer, rates: ReadRateTable):
    pd.DataFrame(rates.pi).to_csv(path, sep='\t', header=False, index=False, float_format='%.9g')


def read_rates(path: PathOrBuffer, clamp_eps: float) -> ReadRateTable:
    frame = pd.read_csv(path, sep='\t', header=None, comment='#')
    pi = frame.to_numpy(dtype=float)
    if pi.ndim != 2 or pi.shape[0] != pi.shape[1]:
        raise TraceFormatError(_source_name(path), 0, f"read-rate matrix must be square, got {pi.shape}")
    return ReadRateTable(pi, clamp_eps)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

def write_events(path: PathOrBuffer, rows: Iterable[Tuple[int, int, int, int]],
                 tag_index: Optional[TagIndex] = None):
    """Event records from (time, object, location, container) rows of dense indices.

    Objects and containers are written as external tag ids; NONE stays -1.
    """
    frame = pd.DataFrame(list(rows), columns=EVENT_COLUMNS)
    frame['tag_id'] = _external_ids(tag_index, TagKind.OBJECT, frame['tag_id'])
    containers = frame['container'].to_numpy(dtype=np.int64)
    contained = containers != NONE
    external = np.full(len(containers), NONE, dtype=np.int64)
    external[contained] = _external_ids(tag_index, TagKind.CONTAINER, containers[contained])
    frame['container'] = external
    _write_table(frame, path)


def read_events(path: PathOrBuffer, tag_index: Optional[TagIndex] = None) -> pd.DataFrame:
    """Event records with tag ids and containers interned back to dense indices"""
    frame = _read_table(path, EVENT_COLUMNS).astype(np.int64).reset_index(drop=True)

    def dense(tag: int) -> int:
        return tag_index.intern(tag).id if tag_index is not None else parse_external(tag).id

    frame['tag_id'] = [dense(int(tag)) for tag in frame['tag_id']]
    frame['container'] = [NONE if c == NONE else dense(int(c)) for c in frame['container']]
    return frame.astype(np.int64)


def write_change_points(path: PathOrBuffer, rows: Iterable[Tuple[int, int, float, int]]):
    pd.DataFrame(list(rows), columns=CHANGE_COLUMNS).to_csv(path, index=False)


def read_change_points(path: PathOrBuffer) -> pd.DataFrame:
    return _read_table(path, CHANGE_COLUMNS, sep=',')


def write_alerts(path: PathOrBuffer, alerts) -> None:
    rows = [(a.tag_id, a.t_alert, a.n_readings) for a in alerts]
    pd.DataFrame(rows, columns=ALERT_COLUMNS).to_csv(path, index=False)


def package_versions() -> Dict[str, str]:
    versions = {'python': platform.python_version()}
    for name in MANIFEST_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = 'not installed'
    return versions


def write_manifest(path: str, config: dict, extra: Optional[dict] = None):
    manifest = {'config': config, 'versions': package_versions()}
    manifest.update(extra or {})
    with open(path, 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)


def read_manifest(path: str) -> dict:
    with open(path) as f:
        return json.load(f)
