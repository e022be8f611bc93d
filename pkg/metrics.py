#!/usr/bin/env python3
"""
Scoring and experiment sweeps

Estimates are scored against ground truth at every batch end: containment
and location error over (epoch, object) pairs, the same two errors over the
objects present at the last batch end, and precision/recall/F-measure of the
reported containment changes. Named scenarios map sweep axes onto simulator
and pipeline settings; sweep points can run in a process pool.
"""

import copy
import itertools
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from baseline_smurf import SmurfSettings, run_smurf
from changepoint import ChangePointReport, Threshold, calibrate_threshold
from config_loader import Config, ConfigurationError
from core_model import NONE, ChangePoint, GroundTruth, ReadRateTable
from distrib import PipelineSettings, batch_schedule, run_distributed, run_site
from monitor import Alert, ExposureMonitor, ObjectQueryState, precision_recall_f, score_alerts
from rfinfer import InferenceResult
from simulator import SupplyChainConfig, TraceBundle, generate, lab_scenarios
from trace_io import write_manifest

logger = logging.getLogger('rftrack.metrics')


@dataclass(frozen=True)
class ScoreReport:
    containment_error: float
    location_error: float
    containment_error_end: float
    location_error_end: float
    precision: float
    recall: float
    f_measure: float
    wall_time_s: float = 0.0
    bytes_transferred: int = 0
    n_scored: int = 0

    def as_row(self) -> dict:
        return asdict(self)


def f_measure(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def match_changes(reports: Iterable[ChangePointReport], truth: Iterable[ChangePoint],
                  tolerance: int):
    """(precision, recall, f); a report matches an unmatched true change of the same object within tolerance"""
    pool: Dict[int, List[int]] = {}
    for cp in sorted(truth, key=lambda cp: (cp.object, cp.t)):
        pool.setdefault(cp.object, []).append(cp.t)
    n_true = sum(len(v) for v in pool.values())
    reports = sorted(reports, key=lambda r: (r.object, r.t_change))
    matched = 0
    for r in reports:
        times = pool.get(r.object, [])
        hits = [i for i, t in enumerate(times) if abs(t - r.t_change) <= tolerance]
        if hits:
            best = min(hits, key=lambda i: abs(times[i] - r.t_change))
            del times[best]
            matched += 1
    return precision_recall_f(matched, len(reports), n_true)


def true_tracks(truth: GroundTruth, times: Sequence[int]):
    """(object, container, location) arrays over the given epochs, one object at a time"""
    times = np.asarray(times, dtype=np.int64)
    n_c = max(truth.container_location, default=-1) + 1
    case_locs = np.full((max(n_c, 1), len(times)), NONE, dtype=np.int64)
    for c, timeline in truth.container_location.items():
        case_locs[c] = timeline.at(times)
    cols = np.arange(len(times))
    for o in truth.objects:
        cont = np.asarray(truth.object_container[o].at(times))
        own = truth.object_location.get(o)
        fallback = own.at(times) if own is not None else np.full(len(times), NONE)
        yield o, cont, np.where(cont >= 0, case_locs[np.maximum(cont, 0), cols], fallback)


def truth_table(truth: GroundTruth, times: Sequence[int]) -> pd.DataFrame:
    """True container, location and site of every object at each scoring instant"""
    times = np.asarray(times, dtype=np.int64)
    frames = [pd.DataFrame({'t': times, 'object': o, 'true_container': cont, 'true_location': loc})
              for o, cont, loc in true_tracks(truth, times)]
    if not frames:
        return pd.DataFrame(columns=['t', 'object', 'true_container', 'true_location', 'true_site'])
    table = pd.concat(frames, ignore_index=True)
    per_site = truth.locations_per_site
    table['true_site'] = np.where(table['true_location'] >= 0,
                                  table['true_location'] // per_site if per_site else 0, NONE)
    return table


def score_estimates(estimates: pd.DataFrame, truth: GroundTruth, times: Sequence[int],
                    reports: Iterable[ChangePointReport] = (), tolerance: int = 300,
                    wall_time_s: float = 0.0, bytes_transferred: int = 0) -> ScoreReport:
    """Score batch-end estimates; an object truly in the system with no estimate counts as wrong.

    Rows with site -1 come from a global inference and match any true site.
    An object estimated in no container while truly in one had no candidates;
    it is left out of the containment error.
    """
    table = truth_table(truth, times)
    table = table[table['true_location'] != NONE]
    estimates = estimates.astype({'t': np.int64, 'object': np.int64, 'site': np.int64})
    if len(estimates) and (estimates['site'] < 0).all():
        merged = table.merge(estimates.drop(columns='site'), on=['t', 'object'], how='left')
    else:
        merged = table.merge(estimates, left_on=['t', 'object', 'true_site'],
                             right_on=['t', 'object', 'site'], how='left')
    missing = NONE - 1
    wrong_c = merged['container'].fillna(missing).to_numpy() != merged['true_container'].to_numpy()
    unassigned = (merged['container'].to_numpy() == NONE) & (merged['true_container'].to_numpy() != NONE)
    wrong_l = merged['location'].fillna(missing).to_numpy() != merged['true_location'].to_numpy()
    end = (merged['t'] == max(times)).to_numpy() if len(merged) else np.zeros(0, dtype=bool)

    def pct(mask, where=None):
        mask = mask if where is None else mask[where]
        return 100.0 * float(mask.mean()) if len(mask) else 0.0

    precision, recall, f = match_changes(
        reports, [cp for cp in truth.change_points if cp.t <= max(times)], tolerance)
    return ScoreReport(pct(wrong_c, ~unassigned), pct(wrong_l),
                       pct(wrong_c, end & ~unassigned), pct(wrong_l, end),
                       precision, recall, f, wall_time_s, bytes_transferred, int(len(merged)))


def score(result: InferenceResult, truth: GroundTruth, changes: Iterable[ChangePointReport] = (),
          times: Optional[Sequence[int]] = None, location_offset: int = 0, site: int = -1,
          tolerance: int = 300) -> ScoreReport:
    """Score one InferenceResult at the given epochs (default: the end of its history)"""
    times = [result.tables.history.t_end] if times is None else list(times)
    rows = []
    for t in times:
        for o in range(result.containment.n_objects):
            location, confident = result.object_location(o, t)
            if location != NONE:
                location += location_offset
            rows.append((t, site, o, result.containment.container_of(o), location, confident))
    estimates = pd.DataFrame(rows, columns=['t', 'site', 'object', 'container', 'location', 'confident'])
    return score_estimates(estimates, truth, times, changes, tolerance, result.wall_time_s)


def score_run(run, bundle: TraceBundle, batch_period: int, bytes_transferred: int = 0) -> ScoreReport:
    """Score a DistributedRun or SmurfRun over its batch schedule"""
    schedule = batch_schedule(bundle.duration, batch_period)
    return score_estimates(run.estimates(), bundle.truth, schedule, run.reports, batch_period,
                           run.max_batch_wall_time, bytes_transferred)


# ---------------------------------------------------------------------------
# Monitor ground truth
# ---------------------------------------------------------------------------

def truth_alerts(bundle: TraceBundle, monitor: ExposureMonitor) -> List[Alert]:
    """Alerts the monitor would raise on the true event stream"""
    times = np.arange(bundle.duration)
    alerts = []
    for o, cont, loc in true_tracks(bundle.truth, times):
        seen = np.flatnonzero(loc != NONE)
        if len(seen) == 0:
            continue
        start = int(seen[0])
        alerts.extend(monitor.advance(ObjectQueryState(int(o)), times[start:], loc[start:],
                                      cont[start:], bundle.temperatures))
    return sorted(alerts, key=lambda a: (a.t_alert, a.tag_id))


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

SIM_AXES = {'rr': 'rr', 'or': 'or_rate', 'fa': 'fa', 'duration': 'duration', 'warehouses': 'warehouses'}


def _simulate(config: Config, point: dict, **fixed) -> TraceBundle:
    overrides = dict(fixed)
    overrides.update({SIM_AXES[k]: v for k, v in point.items() if k in SIM_AXES})
    overrides['seed'] = point['seed']
    sim = SupplyChainConfig.from_config(config, **overrides)
    return generate(sim, clamp_eps=config.get('model', 'clamp_eps'))


def threshold_for(config: Config, rates: ReadRateTable, seed: int) -> Threshold:
    """The configured delta, or an offline calibration against this rate table"""
    cp = config.get('changepoint')
    if cp['delta'] >= 0:
        return Threshold(float(cp['delta']))
    return calibrate_threshold(rates, int(cp['horizon']), int(cp['n_samples']), seed,
                               int(cp['calibration_containers']),
                               int(cp['calibration_members']), bool(cp['neighborhood']))


def site_thresholds(config: Config, bundle: TraceBundle, seed: int) -> Dict[int, Threshold]:
    """One threshold per site; calibration runs once per distinct rate table"""
    cache: Dict[bytes, Threshold] = {}
    out = {}
    for s, rates in enumerate(bundle.rates):
        key = rates.pi.tobytes()
        if key not in cache:
            cache[key] = threshold_for(config, rates, seed)
        out[s] = cache[key]
    return out


def _pipeline_row(config: Config, bundle: TraceBundle, settings: PipelineSettings, method: str,
                  thresholds=None, strategy: str = 'none') -> dict:
    if method == 'smurf':
        smurf = SmurfSettings.from_config(config, batch_period=settings.batch_period)
        run = run_smurf(bundle, smurf)
        report = score_run(run, bundle, settings.batch_period)
        return {'method': 'smurf', 'strategy': strategy, **report.as_row()}
    run = run_distributed(bundle, strategy, settings, thresholds, codec=config.get('distrib', 'codec'))
    report = score_run(run, bundle, settings.batch_period, run.ledger.total_bytes)
    snaps = run.snapshots
    return {'method': 'rfinfer', 'strategy': strategy, **report.as_row(),
            'mean_batch_wall_time': float(np.mean([s.wall_time_s for s in snaps])) if snaps else 0.0,
            'retained_epochs': int(snaps[-1].retained_epochs) if snaps else 0,
            'total_bytes': run.ledger.total_bytes}


def run_stable(config: Config, point: dict) -> List[dict]:
    bundle = _simulate(config, point)
    settings = PipelineSettings.from_config(config, detect_changes=False)
    return [_pipeline_row(config, bundle, settings, 'rfinfer')]


def run_truncation(config: Config, point: dict) -> List[dict]:
    bundle = _simulate(config, point)
    settings = PipelineSettings.from_config(config, detect_changes=False, truncation=point['method'])
    return [_pipeline_row(config, bundle, settings, 'rfinfer')]


def run_changes(config: Config, point: dict) -> List[dict]:
    bundle = _simulate(config, point)
    settings = PipelineSettings.from_config(config, detect_changes=True)
    thresholds = site_thresholds(config, bundle, point['seed']) if point['method'] == 'rfinfer' else None
    return [_pipeline_row(config, bundle, settings, point['method'], thresholds)]


def run_threshold(config: Config, point: dict) -> List[dict]:
    bundle = _simulate(config, point)
    settings = PipelineSettings.from_config(config, detect_changes=True)
    if point['delta'] == 'calibrated':
        thresholds = site_thresholds(Config.from_dict(_with(config, 'changepoint', 'delta', -1.0)),
                                     bundle, point['seed'])
    else:
        thresholds = {s: Threshold(float(point['delta'])) for s in range(bundle.n_sites)}
    row = _pipeline_row(config, bundle, settings, 'rfinfer', thresholds)
    row['threshold'] = float(thresholds[0].delta)
    return [row]


def run_history(config: Config, point: dict) -> List[dict]:
    bundle = _simulate(config, point)
    settings = PipelineSettings.from_config(config, detect_changes=True,
                                            recent_history=int(point['recent_history']))
    return [_pipeline_row(config, bundle, settings, 'rfinfer', site_thresholds(config, bundle, point['seed']))]


def run_lab(config: Config, point: dict) -> List[dict]:
    scenario = {s.name: s for s in lab_scenarios()}[point['trace']]
    bundle = generate(replace(scenario, seed=point['seed']), clamp_eps=config.get('model', 'clamp_eps'))
    settings = PipelineSettings.from_config(config, detect_changes=scenario.change_script)
    thresholds = site_thresholds(config, bundle, point['seed']) \
        if scenario.change_script and point['method'] == 'rfinfer' else None
    row = _pipeline_row(config, bundle, settings, point['method'], thresholds)
    row['changed_case_fraction'] = bundle.truth.flags.get('changed_case_fraction', 0.0)
    return [row]


def run_distrib(config: Config, point: dict) -> List[dict]:
    bundle = _simulate(config, point, warehouses=point.get('warehouses', 4), duration=point.get('duration', 3600))
    settings = PipelineSettings.from_config(config, detect_changes=False)
    row = _pipeline_row(config, bundle, settings, 'rfinfer', strategy=point['strategy'])
    return [row]


def _monitor_for(config: Config, bundle: TraceBundle, query: str, duration: int) -> Callable[[], ExposureMonitor]:
    threshold = float(config.get('monitor', 'threshold_temp'))

    def build():
        return ExposureMonitor(query, threshold, duration, bundle.container_types)
    return build


def run_monitor_scenario(config: Config, point: dict) -> List[dict]:
    shelves = int(config.get('simulator', 'shelves'))
    bundle = _simulate(config, point, freezer_shelves=tuple(range(shelves // 2)), freezer_fraction=0.5,
                       fa=point.get('fa', 60))
    settings = PipelineSettings.from_config(config, detect_changes=False)
    factory = _monitor_for(config, bundle, point['query'], int(point['monitor_duration']))
    started = time.time()
    run = run_site(bundle, settings, monitor_factory=factory)
    inferred = run.alerts
    expected = truth_alerts(bundle, factory())
    precision, recall, f = score_alerts(inferred, expected, settings.batch_period)
    report = score_run(run, bundle, settings.batch_period)
    row = {'method': 'rfinfer', 'strategy': 'none', **report.as_row()}
    row.update({'precision': precision, 'recall': recall, 'f_measure': f,
                'alerts': len(inferred), 'true_alerts': len(expected),
                'wall_time_s': time.time() - started})
    return [row]


def run_throughput(config: Config, point: dict) -> List[dict]:
    items = int(point['items'])
    per_pallet = 10 * 50
    pallets = max(1, -(-items // per_pallet))
    bundle = _simulate(config, point, cases_per_pallet=10, items_per_case=50, max_pallets=pallets,
                       pallet_period=max(1, 200 // pallets), belt_dwell=1, duration=point.get('duration', 900))
    settings = PipelineSettings.from_config(config, detect_changes=False)
    run = run_site(bundle, settings)
    worst = run.max_batch_wall_time
    return [{'method': 'rfinfer', 'strategy': 'none', 'items': bundle.n_objects,
             'max_batch_wall_time': worst, 'batch_period': settings.batch_period,
             'margin': settings.batch_period / worst if worst > 0 else float('inf'),
             'wall_time_s': run.wall_time_s}]


@dataclass(frozen=True)
class Scenario:
    name: str
    axes: Dict[str, list]
    run: Callable[[Config, dict], List[dict]]


SCENARIOS: Dict[str, Scenario] = {s.name: s for s in [
    Scenario('stable', {'rr': [0.6, 0.7, 0.8, 0.9, 1.0]}, run_stable),
    Scenario('truncation', {'duration': [600, 1200, 1800, 2400, 3600], 'method': ['full', 'cr', 'window']},
             run_truncation),
    Scenario('changes', {'rr': [0.6, 0.7, 0.8, 0.9, 1.0], 'fa': [20], 'method': ['rfinfer']}, run_changes),
    Scenario('threshold', {'rr': [0.7], 'fa': [20],
                           'delta': [10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 'calibrated']}, run_threshold),
    Scenario('history', {'rr': [0.7], 'fa': [20], 'recent_history': [100, 200, 300, 400, 500]}, run_history),
    Scenario('baseline', {'rr': [0.7, 0.8], 'fa': [10, 20, 30, 60, 90, 120], 'method': ['rfinfer', 'smurf']},
             run_changes),
    Scenario('lab', {'trace': [f"T{i}" for i in range(1, 9)], 'method': ['rfinfer', 'smurf']}, run_lab),
    Scenario('distrib', {'rr': [0.7], 'strategy': ['centralized', 'none', 'cr']}, run_distrib),
    Scenario('monitor', {'rr': [0.6, 0.8], 'query': ['q1', 'q2'], 'monitor_duration': [300]},
             run_monitor_scenario),
    Scenario('throughput', {'items': [5000, 20000]}, run_throughput),
]}


def _with(config: Config, section: str, key: str, value) -> dict:
    data = copy.deepcopy(config.data)
    data.setdefault(section, {})[key] = value
    return data


@dataclass
class ExperimentSpec:
    scenario: str
    axes: Dict[str, list]
    seeds: List[int]
    out: str = 'results.csv'
    workers: int = 1
    config: dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, config: Config, scenario: Optional[str] = None) -> 'ExperimentSpec':
        exp = config.get('experiment')
        scenario = scenario or exp['scenario']
        if scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {scenario!r}, choose from {sorted(SCENARIOS)}")
        axes = dict(SCENARIOS[scenario].axes)
        for axis, values in (exp.get('sweep') or {}).items():
            axes[axis] = list(values) if isinstance(values, (list, tuple)) else [values]
        return cls(scenario, axes, [int(s) for s in exp['seeds']], exp['out'], int(exp['workers']),
                   copy.deepcopy(config.data))

    def points(self) -> List[dict]:
        names = list(self.axes)
        return [dict(zip(names, values), seed=seed)
                for values in itertools.product(*(self.axes[n] for n in names))
                for seed in self.seeds]


def experiment_spec(config: Config, scenario: Optional[str] = None) -> ExperimentSpec:
    return ExperimentSpec.from_config(config, scenario)


def run_point(scenario: str, config_data: dict, point: dict) -> List[dict]:
    """One sweep point; failures are logged and yield no rows"""
    config = Config.from_dict(config_data)
    try:
        rows = SCENARIOS[scenario].run(config, point)
    except Exception as e:
        logger.error(f"Sweep point {point} of {scenario} failed: {e}")
        return []
    for row in rows:
        for axis, value in point.items():
            row.setdefault(axis, value)
        row['scenario'] = scenario
    logger.info(f"Finished {scenario} point {point}")
    return rows


def run_experiment(spec: ExperimentSpec) -> pd.DataFrame:
    """Run every sweep point, write the CSV and its manifest, return the table"""
    points = spec.points()
    logger.info(f"Running {spec.scenario}: {len(points)} sweep points on {spec.workers} worker(s)")
    started = time.time()
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(run_point, [spec.scenario] * len(points),
                                    [spec.config] * len(points), points))
    else:
        results = [run_point(spec.scenario, spec.config, p) for p in points]
    rows = [row for batch in results for row in batch]
    table = pd.DataFrame(rows)
    if len(table):
        leading = ['scenario'] + list(spec.axes) + ['seed']
        table = table[leading + [c for c in table.columns if c not in leading]]
    if spec.out:
        directory = os.path.dirname(spec.out)
        if directory:
            os.makedirs(directory, exist_ok=True)
        table.to_csv(spec.out, index=False)
        write_manifest(spec.out + '.manifest.json', spec.config,
                       {'scenario': spec.scenario, 'axes': spec.axes, 'seeds': spec.seeds,
                        'rows': len(table), 'failed_points': sum(1 for r in results if not r),
                        'wall_time_s': time.time() - started})
        logger.info(f"Wrote {len(table)} rows to {spec.out}")
    return table
