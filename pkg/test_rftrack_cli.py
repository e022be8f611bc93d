#!/usr/bin/env python3
"""
End-to-end tests for the rftrack command line on a small simulated chain
"""

import os

import pandas as pd
import pytest

from rftrack_cli import build_parser, main

SMALL_CONFIG = """
inference {
  batch_period = 100
  max_iters = 20
}
truncation {
  recent_history = 200
}
simulator {
  warehouses = 2
  duration = 400
  max_pallets = 2
  cases_per_pallet = 2
  items_per_case = 3
  shelves = 4
  shelf_dwell = 100
  transit = 20
  seed = 3
}
"""


@pytest.fixture(scope='module')
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp('cli')
    config = root / 'config.hcl'
    config.write_text(SMALL_CONFIG)
    run = root / 'run'
    assert main(['generate', '-c', str(config), '--out', str(run)]) == 0
    return root, str(config), str(run)


def test_generate_writes_per_site_files(workspace):
    _, _, run = workspace
    for name in ('manifest.json', 'truth.tsv', 'trace_site0.tsv', 'trace_site1.tsv',
                 'rates_site0.tsv', 'rates_site1.tsv'):
        assert os.path.exists(os.path.join(run, name))


def test_infer_then_score(workspace):
    root, config, run = workspace
    results = str(root / 'infer')
    assert main(['infer', '-c', config, '--run', run, '--site', '0', '--out', results]) == 0
    estimates = pd.read_csv(os.path.join(results, 'estimates.csv'))
    assert set(estimates['t']) <= {99, 199, 299, 399}
    assert os.path.exists(os.path.join(results, 'events.tsv'))

    assert main(['score', '-c', config, '--run', run, '--results', results]) == 0
    score = pd.read_csv(os.path.join(results, 'score.csv'))
    assert 0.0 <= score['containment_error'].iloc[0] <= 100.0


def test_monitor_replays_event_stream(workspace):
    root, config, run = workspace
    results = str(root / 'events')
    assert main(['infer', '-c', config, '--run', run, '--out', results]) == 0
    out = str(root / 'monitor')
    assert main(['monitor', '-c', config, '--events', results, '--monitor-duration', '50',
                 '--out', out]) == 0
    score = pd.read_csv(os.path.join(out, 'score.csv'))
    assert 0.0 <= score['f_measure'].iloc[0] <= 1.0


def test_unknown_site_is_an_error(workspace):
    root, config, run = workspace
    assert main(['infer', '-c', config, '--run', run, '--site', '5', '--out', str(root / 'x')]) == 1


def test_invalid_configuration_exits_nonzero(tmp_path):
    config = tmp_path / 'bad.hcl'
    config.write_text('simulator {\n  rr = 1.5\n}\n')
    assert main(['generate', '-c', str(config), '--out', str(tmp_path / 'run')]) == 1


def test_flags_override_config():
    args = build_parser().parse_args(['generate', '--rr', '0.7', '--or', '0.3', '--seed', '9'])
    assert (args.rr, args.or_rate, args.seed) == (0.7, 0.3, 9)
