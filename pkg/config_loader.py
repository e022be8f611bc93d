#!/usr/bin/env python3
"""
Configuration loader for rftrack
Loads and validates HCL configuration files using pyhcl
"""

import copy
import os
import hcl
import logging
from typing import Dict, Any

# Get logger
logger = logging.getLogger('rftrack.config')


class ConfigurationError(ValueError):
    """Raised when a configuration cannot describe a runnable setup"""


class Config:
    """Configuration container with defaults"""

    DEFAULT_CONFIG = {
        'model': {
            'clamp_eps': 1e-6,
        },
        'inference': {
            'batch_period': 300,      # run inference every 300 simulated seconds
            'max_iters': 50,
            'candidates_k': 5,
            'first_window': 60,
            'memoize': True,
            'truncation': 'cr',       # full | cr | window
            'window': 1200,           # W for the window truncation method
        },
        'changepoint': {
            'enabled': False,
            'delta': -1.0,            # < 0 means calibrate offline
            'n_samples': 1000,
            'horizon': 300,
            'min_epochs': 5,
            'calibration_containers': 3,
            'calibration_members': 3,
            'neighborhood': True,
        },
        'truncation': {
            'cr_window': 30,
            'cr_margin': 10.0,
            'recent_history': 600,
        },
        'simulator': {
            'warehouses': 1,
            'topology': 'chain',
            'duration': 1500,
            'pallet_period': 60,
            'max_pallets': 0,         # 0 = inject for the whole run
            'cases_per_pallet': 5,
            'items_per_case': 20,
            'rr': 0.8,
            'rr_spread': 0.0,
            'or': 0.5,
            'or_spread': 0.0,
            'fa': 0,                  # anomaly period in seconds, 0 = off
            'shelves': 16,
            'shelf_period': 10,
            'shelf_dwell': 600,
            'door_dwell': 5,
            'belt_dwell': 5,
            'exit_dwell': 5,
            'transit': 120,
            'mobile': False,
            'shelves_per_aisle': 90,
            'seconds_per_shelf': 10,
            'change_script': False,
            'reference_tags': False,
            'freezer_shelves': [],
            'freezer_fraction': 0.0,
            'freezer_temp': -18.0,
            'ambient_temp': 20.0,
            'allow_out_of_range': False,
            'seed': 0,
        },
        'distrib': {
            'strategy': 'cr',         # centralized | none | cr
            'codec': 'gzip',
            'prune_margin': 50.0,
            'tag_memory_bytes': 65536,
        },
        'smurf': {
            'k': 3,
            'delta_s': 0.05,
            'estimation_window': 60,
            'history': 600,
            'scan_step': 30,
            'min_after': 30,
        },
        'monitor': {
            'query': 'q1',
            'threshold_temp': 0.0,
            'duration_hours': 6.0,
        },
        'experiment': {
            'scenario': 'stable',
            'seeds': [0, 1, 2],
            'workers': 1,
            'out': 'results.csv',
            'sweep': {},
        },
        'server': {
            'host': '0.0.0.0',
            'port': 8001,
            'run_dir': './run',
            'flask_debug': False,
        },
        'logging': {
            'level': 'INFO',
        },
    }

    def __init__(self, config_file: str = 'config.hcl'):
        """Load configuration from HCL file"""
        self.config_file = config_file
        self.data = self._load_config()

    def _merge_config(self, base: Dict, override: Dict) -> Dict:
        """Deep merge two configuration dictionaries"""
        result = copy.deepcopy(base)
        for key, value in override.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._merge_config(result[key], value)
            else:
                result[key] = value
        return result

    def _load_config(self) -> Dict[str, Any]:
        """Load and parse HCL configuration file"""
        if self.config_file is None or not os.path.exists(self.config_file):
            if self.config_file is not None:
                logger.warning(f"Config file {self.config_file} not found, using defaults")
            return copy.deepcopy(self.DEFAULT_CONFIG)

        try:
            with open(self.config_file, 'r') as f:
                parsed = hcl.load(f)

            # Merge with defaults
            return self._merge_config(self.DEFAULT_CONFIG, parsed)

        except Exception as e:
            logger.error(f"Error loading config file {self.config_file}: {e}")
            logger.info("Using default configuration")
            return copy.deepcopy(self.DEFAULT_CONFIG)

    @classmethod
    def from_dict(cls, overrides: Dict[str, Any]) -> 'Config':
        """Build a configuration from defaults plus an override dictionary"""
        config = cls.__new__(cls)
        config.config_file = None
        config.data = config._merge_config(cls.DEFAULT_CONFIG, overrides)
        return config

    def get(self, section: str, key: str = None, default=None):
        """Get configuration value"""
        if key is None:
            return self.data.get(section, {})
        return self.data.get(section, {}).get(key, default)

    def set(self, section: str, key: str, value):
        """Override a configuration value (CLI flags)"""
        self.data.setdefault(section, {})[key] = value

    def validate(self) -> bool:
        """Validate configuration"""
        errors = []
        sim = self.get('simulator')
        relaxed = sim.get('allow_out_of_range')

        eps = self.get('model', 'clamp_eps')
        if not (0 < eps < 0.5):
            errors.append(f"model.clamp_eps must be in (0, 0.5), got {eps}")

        # evaluated parameter ranges
        rr, overlap = sim.get('rr'), sim.get('or')
        if not (0.0 < rr <= 1.0):
            errors.append(f"simulator.rr must be in (0, 1], got {rr}")
        elif not (0.6 <= rr <= 1.0):
            (logger.warning if relaxed else errors.append)(
                f"simulator.rr {rr} is outside the evaluated range [0.6, 1]")
        if not (0.0 <= overlap < 1.0):
            errors.append(f"simulator.or must be in [0, 1), got {overlap}")
        elif not (0.2 <= overlap <= 0.8):
            (logger.warning if relaxed else errors.append)(
                f"simulator.or {overlap} is outside the evaluated range [0.2, 0.8]")

        warehouses = sim.get('warehouses')
        if not (1 <= warehouses <= 10):
            (logger.warning if relaxed else errors.append)(
                f"simulator.warehouses should be between 1 and 10, got {warehouses}")

        fa = sim.get('fa')
        if fa and not (10 <= fa <= 120):
            (logger.warning if relaxed else errors.append)(
                f"simulator.fa {fa} is outside the evaluated range [10, 120]")

        if sim.get('topology') not in ('chain', 'tree'):
            errors.append(f"Unknown simulator.topology: {sim.get('topology')}")

        for section, key in (('inference', 'batch_period'), ('inference', 'max_iters'),
                             ('inference', 'candidates_k'), ('truncation', 'cr_window'),
                             ('truncation', 'recent_history'), ('smurf', 'k')):
            if self.get(section, key) < 1:
                errors.append(f"{section}.{key} must be >= 1")

        if self.get('inference', 'truncation') not in ('full', 'cr', 'window'):
            errors.append(f"Unknown inference.truncation: {self.get('inference', 'truncation')}")

        if self.get('truncation', 'recent_history') < self.get('inference', 'batch_period'):
            errors.append("truncation.recent_history must cover at least one inference batch")

        if self.get('distrib', 'strategy') not in ('centralized', 'none', 'cr'):
            errors.append(f"Unknown distrib.strategy: {self.get('distrib', 'strategy')}")

        if self.get('distrib', 'codec') not in ('gzip', 'bz2', 'lzma'):
            errors.append(f"Unknown distrib.codec: {self.get('distrib', 'codec')}")

        tag_memory = self.get('distrib', 'tag_memory_bytes')
        if not (4096 <= tag_memory <= 65536):
            logger.warning(f"distrib.tag_memory_bytes {tag_memory} is outside the 4-64 KB tag range")

        if self.get('monitor', 'query') not in ('q1', 'q2'):
            errors.append(f"Unknown monitor.query: {self.get('monitor', 'query')}")

        port = self.get('server', 'port')
        if not (1 <= port <= 65535):
            errors.append(f"Invalid server.port: {port}")

        if errors:
            logger.error("Configuration errors:")
            for error in errors:
                logger.error(f"  {error}")
            return False

        return True

    def __repr__(self):
        """String representation of config"""
        lines = ["rftrack configuration:"]
        for section, values in self.data.items():
            lines.append(f"  [{section}]")
            for key, value in values.items():
                lines.append(f"    {key} = {value}")
        return "\n".join(lines)


def load_config(config_file: str = 'config.hcl') -> Config:
    """Load and validate configuration"""
    config = Config(config_file)
    if not config.validate():
        raise ValueError("Invalid configuration")
    return config
