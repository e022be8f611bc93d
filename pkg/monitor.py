#!/usr/bin/env python3
"""
Exposure monitoring over the inferred event stream

Each object runs a small automaton: while the monitored condition holds the
object is exposed and its temperatures are collected; any epoch where the
condition fails resets it. Continuous exposure for the configured duration
raises one alert per episode. Query states of objects travelling in the same
container are shipped as one centroid image plus byte deltas.
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core_model import NONE

logger = logging.getLogger('rftrack.monitor')

STATE_HEADER = np.dtype([('tag', '<u8'), ('state', 'u1'), ('start', '<i8'), ('count', '<u4')])
DELTA_HEADER = np.dtype([('tag', '<u8'), ('length', '<u4'), ('runs', '<u4')])
DELTA_RUN = np.dtype([('offset', '<u4'), ('length', '<u4')])


class StateDecodeError(ValueError):
    """A shared query-state delta does not decode against its centroid"""


class Automaton(IntEnum):
    IDLE = 0
    EXPOSED = 1
    ALERTED = 2     # still exposed, alert already raised for this episode


@dataclass
class ObjectQueryState:
    tag_id: int
    state: Automaton = Automaton.IDLE
    start: int = -1
    temps: List[float] = field(default_factory=list)

    @property
    def exposed(self) -> bool:
        return self.state != Automaton.IDLE

    def reset(self):
        self.state = Automaton.IDLE
        self.start = -1
        self.temps = []

    def to_bytes(self) -> bytes:
        header = np.array([(self.tag_id, int(self.state), self.start, len(self.temps))], dtype=STATE_HEADER)
        return header.tobytes() + np.asarray(self.temps, dtype='<f4').tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> 'ObjectQueryState':
        if len(data) < STATE_HEADER.itemsize:
            raise StateDecodeError(f"state image of {len(data)} bytes is shorter than its header")
        header = np.frombuffer(data, STATE_HEADER, count=1)[0]
        count = int(header['count'])
        if len(data) != STATE_HEADER.itemsize + 4 * count:
            raise StateDecodeError(f"object {int(header['tag'])}: image length does not match "
                                   f"{count} temperature readings")
        temps = np.frombuffer(data, '<f4', count=count, offset=STATE_HEADER.itemsize)
        return cls(int(header['tag']), Automaton(int(header['state'])), int(header['start']),
                   [float(x) for x in temps])

    def __eq__(self, other):
        if not isinstance(other, ObjectQueryState):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()


@dataclass(frozen=True)
class Alert:
    tag_id: int
    t_alert: int
    temps: Tuple[float, ...]

    @property
    def n_readings(self) -> int:
        return len(self.temps)


@dataclass
class ExposureMonitor:
    """q1: not in a freezer container and temp > threshold; q2: temp > threshold only"""
    query: str = 'q1'
    threshold_temp: float = 0.0
    duration: int = 6 * 3600
    container_types: Mapping[int, str] = field(default_factory=dict)
    data_gaps: int = 0

    @classmethod
    def from_config(cls, config, container_types: Mapping[int, str]) -> 'ExposureMonitor':
        return cls(config.get('monitor', 'query'), float(config.get('monitor', 'threshold_temp')),
                   int(round(float(config.get('monitor', 'duration_hours')) * 3600)), container_types)

    def _container_ok(self, container: int) -> bool:
        if self.query == 'q2':
            return True
        return container == NONE or self.container_types.get(container) != 'freezer'

    def condition(self, location: int, container: int, temp: Optional[float]) -> bool:
        if temp is None:
            return False
        return self._container_ok(container) and temp > self.threshold_temp

    def advance(self, state: ObjectQueryState, times: np.ndarray, locations: np.ndarray,
                containers: np.ndarray, temps) -> List[Alert]:
        """Run the automaton over consecutive epochs of one object; same result as step()"""
        times = np.asarray(times, dtype=np.int64)
        locations = np.asarray(locations, dtype=np.int64)
        containers = np.asarray(containers, dtype=np.int64)
        table = temps.location_temps
        valid = (locations >= 0) & (locations < len(table))
        values = np.where(valid, table[np.where(valid, locations, 0)], np.nan).astype('<f4')
        self.data_gaps += int((~valid).sum())
        if self.query == 'q2':
            ok = np.ones(len(times), dtype=bool)
        else:
            kinds, inverse = np.unique(containers, return_inverse=True)
            ok = np.array([self._container_ok(int(c)) for c in kinds], dtype=bool)[inverse.ravel()]
        cond = valid & ok & (values > self.threshold_temp)

        alerts = []
        edges = np.flatnonzero(np.diff(np.concatenate([[0], cond.astype(np.int8), [0]])))
        for a, b in zip(edges[::2], edges[1::2]):
            if not (a == 0 and state.exposed):
                state.state, state.start, state.temps = Automaton.EXPOSED, int(times[a]), []
            before = len(state.temps)
            state.temps.extend(float(x) for x in values[a:b])
            if state.state == Automaton.EXPOSED:
                t_alert = state.start + self.duration - 1
                if t_alert <= times[b - 1]:
                    upto = before + int(t_alert - times[a]) + 1
                    alerts.append(Alert(state.tag_id, int(t_alert), tuple(state.temps[:upto])))
                    logger.debug(f"Exposure alert: object {state.tag_id} at t={t_alert} after {upto} readings")
                    state.state = Automaton.ALERTED
            if b < len(times):
                state.reset()
        if len(times) and not cond[-1]:
            state.reset()
        return alerts


def step(state: ObjectQueryState, event: Tuple[int, int, int, int], temps,
         monitor: ExposureMonitor) -> Tuple[ObjectQueryState, Optional[Alert]]:
    """Feed one (t, tag, location, container) event to an object's automaton"""
    t, _tag, location, container = event
    temp = temps.at(location, t)
    if temp is None:
        monitor.data_gaps += 1
    if not monitor.condition(location, container, temp):
        state.reset()
        return state, None
    temp = float(np.float32(temp))
    if not state.exposed:
        state.state, state.start, state.temps = Automaton.EXPOSED, int(t), []
    state.temps.append(temp)
    if state.state == Automaton.EXPOSED and t - state.start + 1 >= monitor.duration:
        state.state = Automaton.ALERTED
        return state, Alert(state.tag_id, int(t), tuple(state.temps))
    return state, None


def run_monitor(events, temps, monitor: ExposureMonitor, t_end: Optional[int] = None,
                states: Optional[Dict[int, ObjectQueryState]] = None
                ) -> Tuple[List[Alert], Dict[int, ObjectQueryState]]:
    """Drive the automata over a whole event stream.

    events: DataFrame with columns time, tag_id, location, container. Between
    an object's events its last location and container are held, up to t_end
    (default: the last event time).
    """
    states = {} if states is None else states
    alerts: List[Alert] = []
    if len(events) == 0:
        return alerts, states
    events = events.sort_values(['tag_id', 'time'], kind='stable')
    t_end = int(events['time'].max()) if t_end is None else t_end
    for tag, group in events.groupby('tag_id', sort=True):
        t_ev = group['time'].to_numpy(dtype=np.int64)
        t_ev, last = np.unique(t_ev[::-1], return_index=True)
        last = len(group) - 1 - last
        times = np.arange(t_ev[0], t_end + 1)
        idx = np.searchsorted(t_ev, times, side='right') - 1
        rows = last[idx]
        state = states.setdefault(int(tag), ObjectQueryState(int(tag)))
        alerts.extend(monitor.advance(state, times, group['location'].to_numpy()[rows],
                                      group['container'].to_numpy()[rows], temps))
    alerts.sort(key=lambda a: (a.t_alert, a.tag_id))
    return alerts, states


# ---------------------------------------------------------------------------
# Centroid sharing
# ---------------------------------------------------------------------------

def byte_distance(a: bytes, b: bytes) -> int:
    n = min(len(a), len(b))
    differing = int(np.count_nonzero(np.frombuffer(a, 'u1', n) != np.frombuffer(b, 'u1', n)))
    return differing + abs(len(a) - len(b))


def encode_delta(tag_id: int, centroid: bytes, target: bytes) -> bytes:
    n = min(len(centroid), len(target))
    diff = np.frombuffer(centroid, 'u1', n) != np.frombuffer(target, 'u1', n)
    diff = np.concatenate([diff, np.ones(len(target) - n, dtype=bool)])
    edges = np.flatnonzero(np.diff(np.concatenate([[0], diff.astype(np.int8), [0]])))
    starts, ends = edges[::2], edges[1::2]
    header = np.array([(tag_id, len(target), len(starts))], dtype=DELTA_HEADER)
    parts = [header.tobytes()]
    for s, e in zip(starts, ends):
        parts.append(np.array([(s, e - s)], dtype=DELTA_RUN).tobytes())
        parts.append(target[s:e])
    return b''.join(parts)


def decode_delta(centroid: bytes, delta: bytes) -> Tuple[int, bytes]:
    if len(delta) < DELTA_HEADER.itemsize:
        raise StateDecodeError(f"delta of {len(delta)} bytes is shorter than its header")
    header = np.frombuffer(delta, DELTA_HEADER, count=1)[0]
    tag, length, runs = int(header['tag']), int(header['length']), int(header['runs'])
    out = bytearray(centroid[:length]) + bytearray(max(0, length - len(centroid)))
    pos = DELTA_HEADER.itemsize
    for _ in range(runs):
        if pos + DELTA_RUN.itemsize > len(delta):
            raise StateDecodeError(f"object {tag}: delta truncated in run header")
        run = np.frombuffer(delta, DELTA_RUN, count=1, offset=pos)[0]
        pos += DELTA_RUN.itemsize
        offset, size = int(run['offset']), int(run['length'])
        if offset + size > length or pos + size > len(delta):
            raise StateDecodeError(f"object {tag}: run at offset {offset} overruns the state image")
        out[offset:offset + size] = delta[pos:pos + size]
        pos += size
    if pos != len(delta):
        raise StateDecodeError(f"object {tag}: {len(delta) - pos} trailing bytes in delta")
    return tag, bytes(out)


@dataclass
class SharedStateBlock:
    centroid: bytes = b''
    deltas: Dict[int, bytes] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.centroid) + sum(len(d) for d in self.deltas.values())

    @property
    def raw_size(self) -> int:
        """Bytes the member images would take unshared"""
        if not self.centroid:
            return 0
        return len(self.centroid) + sum(int(np.frombuffer(d, DELTA_HEADER, count=1)[0]['length'])
                                        for d in self.deltas.values())


def share(states: Sequence[ObjectQueryState]) -> SharedStateBlock:
    """Pick the image nearest all others as centroid; encode the rest as deltas"""
    if not states:
        return SharedStateBlock()
    states = sorted(states, key=lambda s: s.tag_id)
    images = [s.to_bytes() for s in states]
    n = len(images)
    distance = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            distance[i, j] = distance[j, i] = byte_distance(images[i], images[j])
    center = int(np.argmin(distance.sum(axis=1)))
    deltas = {states[i].tag_id: encode_delta(states[i].tag_id, images[center], images[i])
              for i in range(n) if i != center}
    block = SharedStateBlock(images[center], deltas)
    logger.debug(f"Shared {n} query states around object {states[center].tag_id}: "
                 f"{block.raw_size} -> {block.size} bytes")
    return block


def unshare(block: SharedStateBlock) -> List[ObjectQueryState]:
    if not block.centroid:
        return []
    restored = [ObjectQueryState.from_bytes(block.centroid)]
    for tag, delta in block.deltas.items():
        decoded_tag, image = decode_delta(block.centroid, delta)
        if decoded_tag != tag:
            raise StateDecodeError(f"object {tag}: delta is labelled for object {decoded_tag}")
        try:
            restored.append(ObjectQueryState.from_bytes(image))
        except StateDecodeError as e:
            raise StateDecodeError(f"object {tag}: {e}") from e
    return sorted(restored, key=lambda s: s.tag_id)


def score_alerts(inferred: Iterable[Alert], truth: Iterable[Alert], tolerance: int) -> Tuple[float, float, float]:
    """(precision, recall, f_measure); one-to-one matching per tag within tolerance"""
    inferred = sorted(inferred, key=lambda a: (a.tag_id, a.t_alert))
    pool: Dict[int, List[int]] = {}
    for a in sorted(truth, key=lambda a: (a.tag_id, a.t_alert)):
        pool.setdefault(a.tag_id, []).append(a.t_alert)
    n_truth = sum(len(v) for v in pool.values())
    matched = 0
    for a in inferred:
        times = pool.get(a.tag_id, [])
        for i, t in enumerate(times):
            if abs(t - a.t_alert) <= tolerance:
                del times[i]
                matched += 1
                break
    return precision_recall_f(matched, len(inferred), n_truth)


def precision_recall_f(matched: int, n_reported: int, n_true: int) -> Tuple[float, float, float]:
    if n_reported == 0 and n_true == 0:
        return 1.0, 1.0, 1.0
    precision = matched / n_reported if n_reported else 0.0
    recall = matched / n_true if n_true else 0.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)
