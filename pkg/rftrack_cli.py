#!/usr/bin/env python3
"""
rftrack - containment and location inference over RFID reading streams
Command-line entry point: simulate, infer, detect, migrate, score, sweep, serve
"""

import argparse
import logging
import os
import sys
import time
import traceback
from typing import Optional

import pandas as pd

from baseline_smurf import SmurfRun, SmurfSettings, SmurfSite
from changepoint import ChangePointReport, reports_to_rows
from config_loader import Config
from core_model import ObservationHistory, ReadRateTable, TagIndex
from distrib import CostLedger, DistributedRun, PipelineSettings, SiteRuntime, batch_schedule, \
    run_distributed, run_site
from metrics import experiment_spec, run_experiment, score_estimates, score_run, site_thresholds, \
    threshold_for, truth_alerts
from monitor import ExposureMonitor, run_monitor, score_alerts
from rftrack_server import ResultServer
from simulator import SupplyChainConfig, TraceBundle, generate
from trace_io import read_change_points, read_events, read_manifest, read_rates, read_trace, read_truth, \
    write_alerts, write_change_points, write_events, write_manifest, write_rates, write_trace, write_truth

logger = logging.getLogger('rftrack')

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

TRUTH = 'truth.tsv'
MANIFEST = 'manifest.json'
ESTIMATES = 'estimates.csv'
EVENTS = 'events.tsv'
CHANGES = 'changes.csv'
LEDGER = 'ledger.csv'
ALERTS = 'alerts.csv'
TRUE_ALERTS = 'true_alerts.csv'
SCORE = 'score.csv'

# CLI flag -> simulator config key
SIM_FLAGS = {'seed': 'seed', 'duration': 'duration', 'warehouses': 'warehouses',
             'rr': 'rr', 'or_rate': 'or', 'fa': 'fa'}


def trace_path(run_dir: str, site: int) -> str:
    return os.path.join(run_dir, f'trace_site{site}.tsv')


def rates_path(run_dir: str, site: int) -> str:
    return os.path.join(run_dir, f'rates_site{site}.tsv')


def configure_logging(level: str):
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT,
                        handlers=[logging.StreamHandler(sys.stdout)])
    logging.getLogger().setLevel(getattr(logging, str(level).upper(), logging.INFO))


def build_config(args) -> Config:
    """Config file plus command-line overrides, validated"""
    config = Config(args.config)
    for flag, key in SIM_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            config.set('simulator', key, value)
    if not config.validate():
        raise ValueError("Invalid configuration")
    return config


def output_dir(args, config: Config) -> str:
    out = args.out or config.get('server', 'run_dir')
    os.makedirs(out, exist_ok=True)
    return out


def simulate(config: Config) -> TraceBundle:
    return generate(SupplyChainConfig.from_config(config), clamp_eps=config.get('model', 'clamp_eps'))


def finish(out: str, config: Config, command: str, **extra):
    extra.update(command=command, seed=config.get('simulator', 'seed'))
    write_manifest(os.path.join(out, MANIFEST), config.data, extra)
    logger.info(f"Results written to {out}")


def load_site(run_dir: str, site: int, config: Config):
    """One site's trace, read rates, manifest and tag index from a generated run directory"""
    manifest = read_manifest(os.path.join(run_dir, MANIFEST))
    if not 0 <= site < manifest['n_sites']:
        raise ValueError(f"site {site} is not in {run_dir} ({manifest['n_sites']} sites)")
    rates = read_rates(rates_path(run_dir, site), config.get('model', 'clamp_eps'))
    tags = TagIndex.identity(manifest['n_containers'], manifest['n_objects'])
    history, _ = read_trace(trace_path(run_dir, site), rates.n_locations, 0, manifest['duration'] - 1, tags)
    return history, rates, manifest, tags


def run_single_site(site: int, history: ObservationHistory, rates: ReadRateTable,
                    settings: PipelineSettings, threshold, location_offset: int) -> DistributedRun:
    started = time.time()
    runtime = SiteRuntime(site, history, rates, settings, 'none', threshold, location_offset)
    for now in batch_schedule(history.n_epochs, settings.batch_period):
        runtime.run_batch(now)
    return DistributedRun('none', [runtime], CostLedger('none'), time.time() - started)


def write_run(out: str, run, tag_index: Optional[TagIndex] = None):
    estimates = run.estimates()
    estimates.to_csv(os.path.join(out, ESTIMATES), index=False)
    write_events(os.path.join(out, EVENTS),
                 estimates[['t', 'object', 'location', 'container']].itertuples(index=False, name=None),
                 tag_index)
    write_change_points(os.path.join(out, CHANGES), reports_to_rows(run.reports))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args, config: Config) -> int:
    bundle = simulate(config)
    out = output_dir(args, config)
    for s, history in enumerate(bundle.histories):
        write_trace(trace_path(out, s), history, bundle.tag_index)
        write_rates(rates_path(out, s), bundle.rates[s])
    write_truth(os.path.join(out, TRUTH), bundle.truth)
    bundle.events.to_csv(os.path.join(out, 'sim_events.csv'), index=False)
    finish(out, config, 'generate', n_sites=bundle.n_sites, n_containers=bundle.n_containers,
           n_objects=bundle.n_objects, locations_per_site=bundle.locations_per_site,
           duration=bundle.duration)
    return 0


def _infer(args, config: Config, detect_changes: bool) -> int:
    history, rates, manifest, tags = load_site(args.run, args.site, config)
    settings = PipelineSettings.from_config(config, detect_changes=detect_changes)
    threshold = threshold_for(config, rates, config.get('simulator', 'seed')) if detect_changes else None
    run = run_single_site(args.site, history, rates, settings, threshold,
                          args.site * manifest['locations_per_site'])
    out = output_dir(args, config)
    write_run(out, run, tags)
    extra = {'site': args.site, 'source': args.run}
    if threshold is not None:
        extra['threshold'] = threshold.delta
    finish(out, config, 'detect' if detect_changes else 'infer', **extra)
    return 0


def cmd_infer(args, config: Config) -> int:
    return _infer(args, config, detect_changes=False)


def cmd_detect(args, config: Config) -> int:
    return _infer(args, config, detect_changes=True)


def cmd_baseline(args, config: Config) -> int:
    history, _, manifest, tags = load_site(args.run, args.site, config)
    settings = SmurfSettings.from_config(config)
    started = time.time()
    site = SmurfSite(args.site, history, settings, args.site * manifest['locations_per_site'])
    previous = -1
    for now in batch_schedule(history.n_epochs, settings.batch_period):
        site.run_batch(now, previous)
        previous = now
    run = SmurfRun([site], time.time() - started)
    out = output_dir(args, config)
    write_run(out, run, tags)
    finish(out, config, 'baseline', site=args.site, source=args.run)
    return 0


def cmd_distrib(args, config: Config) -> int:
    strategy = args.strategy or config.get('distrib', 'strategy')
    bundle = simulate(config)
    settings = PipelineSettings.from_config(config)
    thresholds = site_thresholds(config, bundle, config.get('simulator', 'seed')) \
        if settings.detect_changes else None
    run = run_distributed(bundle, strategy, settings, thresholds, codec=config.get('distrib', 'codec'))
    out = output_dir(args, config)
    write_run(out, run, bundle.tag_index)
    run.ledger.to_frame().to_csv(os.path.join(out, LEDGER), index=False)
    report = score_run(run, bundle, settings.batch_period, run.ledger.total_bytes)
    pd.DataFrame([report.as_row()]).to_csv(os.path.join(out, SCORE), index=False)
    logger.info(f"{strategy}: containment error {report.containment_error:.2f}%, "
                f"location error {report.location_error:.2f}%, {run.ledger.total_bytes} bytes")
    finish(out, config, 'distrib', strategy=strategy, total_bytes=run.ledger.total_bytes)
    return 0


def cmd_monitor(args, config: Config) -> int:
    bundle = simulate(config)
    settings = PipelineSettings.from_config(config)

    def factory():
        monitor = ExposureMonitor.from_config(config, bundle.container_types)
        if args.monitor_duration:
            monitor.duration = args.monitor_duration
        return monitor

    out = output_dir(args, config)
    if args.events:
        # replay an event stream written by infer/detect/baseline over the same simulated trace
        events = read_events(os.path.join(args.events, EVENTS), bundle.tag_index)
        alerts, _ = run_monitor(events, bundle.temperatures, factory(), t_end=bundle.duration - 1)
    else:
        run = run_site(bundle, settings, monitor_factory=factory)
        write_run(out, run, bundle.tag_index)
        alerts = run.alerts
    expected = truth_alerts(bundle, factory())
    precision, recall, f = score_alerts(alerts, expected, settings.batch_period)
    write_alerts(os.path.join(out, ALERTS), alerts)
    write_alerts(os.path.join(out, TRUE_ALERTS), expected)
    pd.DataFrame([{'precision': precision, 'recall': recall, 'f_measure': f,
                   'alerts': len(alerts), 'true_alerts': len(expected)}]) \
        .to_csv(os.path.join(out, SCORE), index=False)
    logger.info(f"{len(alerts)} alerts ({len(expected)} expected): "
                f"precision {precision:.3f}, recall {recall:.3f}, F {f:.3f}")
    finish(out, config, 'monitor', query=config.get('monitor', 'query'))
    return 0


def cmd_score(args, config: Config) -> int:
    manifest = read_manifest(os.path.join(args.run, MANIFEST))
    truth = read_truth(os.path.join(args.run, TRUTH), manifest['locations_per_site'])
    results = args.results or args.out or config.get('server', 'run_dir')
    estimates = pd.read_csv(os.path.join(results, ESTIMATES))
    reports = []
    changes_file = os.path.join(results, CHANGES)
    if os.path.exists(changes_file):
        reports = [ChangePointReport(int(r.object_id), int(r.t_change), float(r.delta), int(r.new_container))
                   for r in read_change_points(changes_file).itertuples(index=False)]
    times = sorted(int(t) for t in estimates['t'].unique())
    if not times:
        raise ValueError(f"{results}/{ESTIMATES} has no estimates to score")
    report = score_estimates(estimates, truth, times, reports, config.get('inference', 'batch_period'))
    pd.DataFrame([report.as_row()]).to_csv(os.path.join(results, SCORE), index=False)
    logger.info(f"Containment error {report.containment_error:.2f}%, location error "
                f"{report.location_error:.2f}%, change F-measure {report.f_measure:.3f} "
                f"over {report.n_scored} object-epochs")
    return 0


def cmd_sweep(args, config: Config) -> int:
    if args.workers:
        config.set('experiment', 'workers', args.workers)
    if args.seed is not None:
        config.set('experiment', 'seeds', [args.seed])
    if args.out:
        config.set('experiment', 'out', args.out)
    spec = experiment_spec(config, args.scenario)
    table = run_experiment(spec)
    return 0 if len(table) else 1


def cmd_serve(args, config: Config) -> int:
    ResultServer(config, args.run or args.out).start()
    return 0


COMMANDS = {
    'generate': cmd_generate,
    'infer': cmd_infer,
    'detect': cmd_detect,
    'baseline': cmd_baseline,
    'distrib': cmd_distrib,
    'monitor': cmd_monitor,
    'score': cmd_score,
    'sweep': cmd_sweep,
    'serve': cmd_serve,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-c', '--config', default='config.hcl',
                        help='Path to HCL configuration file (default: config.hcl)')
    common.add_argument('--seed', type=int, help='Simulator seed')
    common.add_argument('--out', help='Output directory (sweep: CSV path)')
    common.add_argument('--duration', type=int, help='Simulated seconds')
    common.add_argument('--warehouses', type=int, help='Number of warehouses')
    common.add_argument('--rr', type=float, help='Read rate of the main reader')
    common.add_argument('--or', dest='or_rate', type=float, help='Overlap rate of adjacent shelves')
    common.add_argument('--fa', type=int, help='Anomaly period in seconds (0 = off)')

    parser = argparse.ArgumentParser(description='rftrack - RFID containment and location inference')
    sub = parser.add_subparsers(dest='command', required=True)

    sub.add_parser('generate', parents=[common], help='Simulate a supply chain and write its traces')
    for name, help_text in (('infer', 'Containment and location inference over one site'),
                            ('detect', 'Inference with containment change detection'),
                            ('baseline', 'SMURF* smoothing and co-location baseline')):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument('--run', required=True, help='Directory written by generate')
        p.add_argument('--site', type=int, default=0, help='Warehouse whose trace to process')

    p = sub.add_parser('distrib', parents=[common], help='Multi-site run with state migration')
    p.add_argument('--strategy', choices=['centralized', 'none', 'cr'])

    p = sub.add_parser('monitor', parents=[common], help='Temperature exposure monitoring')
    p.add_argument('--monitor-duration', type=int, help='Exposure duration in seconds')
    p.add_argument('--events', help='Results directory whose events.tsv to monitor instead of inferring')

    p = sub.add_parser('score', parents=[common], help='Score estimates against ground truth')
    p.add_argument('--run', required=True, help='Directory written by generate')
    p.add_argument('--results', help='Directory holding estimates.csv (default: --out)')

    p = sub.add_parser('sweep', parents=[common], help='Run an experiment scenario')
    p.add_argument('--scenario', help='Scenario name (default: experiment.scenario)')
    p.add_argument('--workers', type=int, help='Parallel sweep points')

    p = sub.add_parser('serve', parents=[common], help='Serve a run directory over HTTP')
    p.add_argument('--run', help='Run directory (default: server.run_dir)')
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(os.environ.get('RFTRACK_LOG_LEVEL', 'INFO'))

    try:
        config = build_config(args)
        configure_logging(os.environ.get('RFTRACK_LOG_LEVEL', config.get('logging', 'level')))
        return COMMANDS[args.command](args, config)

    except ValueError as e:
        logger.error(f"Error: {e}")
        return 1

    except KeyboardInterrupt:
        logger.info("Interrupted.")
        return 0

    except Exception as e:
        logger.error(f"Fatal error: {e}")
        traceback.print_exc()
        return 1


if __name__ == '__main__':
    sys.exit(main())
