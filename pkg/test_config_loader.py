#!/usr/bin/env python3
"""
Tests for the HCL configuration loader
"""

import pytest

from config_loader import Config, ConfigurationError, load_config


def test_missing_file_uses_defaults(tmp_path):
    """A config path that does not exist falls back to the built-in defaults"""
    config = Config(str(tmp_path / 'nope.hcl'))
    assert config.get('inference', 'batch_period') == 300
    assert config.get('distrib', 'strategy') == 'cr'
    assert config.validate()


def test_file_values_merge_over_defaults(tmp_path):
    path = tmp_path / 'config.hcl'
    path.write_text('inference {\n  batch_period = 120\n}\nsimulator {\n  rr = 0.7\n}\n')
    config = Config(str(path))

    assert config.get('inference', 'batch_period') == 120
    assert config.get('simulator', 'rr') == 0.7
    # untouched keys of a touched section survive the merge
    assert config.get('inference', 'max_iters') == 50
    assert config.get('simulator', 'or') == 0.5


def test_get_section_and_default():
    config = Config.from_dict({})
    assert config.get('smurf')['k'] == 3
    assert config.get('smurf', 'missing', 'fallback') == 'fallback'
    assert config.get('no_such_section') == {}


def test_set_overrides_value():
    config = Config.from_dict({})
    config.set('simulator', 'seed', 7)
    assert config.get('simulator', 'seed') == 7


def test_from_dict_does_not_leak_into_defaults():
    Config.from_dict({'inference': {'batch_period': 60}})
    assert Config.from_dict({}).get('inference', 'batch_period') == 300


def test_validate_rejects_bad_values():
    assert not Config.from_dict({'simulator': {'rr': 1.5}}).validate()
    assert not Config.from_dict({'inference': {'truncation': 'sometimes'}}).validate()
    assert not Config.from_dict({'distrib': {'codec': 'zip'}}).validate()
    assert not Config.from_dict({'monitor': {'query': 'q3'}}).validate()
    assert not Config.from_dict({'truncation': {'recent_history': 100}}).validate()


def test_out_of_range_parameters_can_be_allowed():
    """rr below the evaluated range is an error unless explicitly allowed"""
    assert not Config.from_dict({'simulator': {'rr': 0.4}}).validate()
    assert Config.from_dict({'simulator': {'rr': 0.4, 'allow_out_of_range': True}}).validate()


def test_load_config_raises_on_invalid(tmp_path):
    path = tmp_path / 'bad.hcl'
    path.write_text('server {\n  port = 70000\n}\n')
    with pytest.raises(ValueError, match="Invalid configuration"):
        load_config(str(path))


def test_configuration_error_is_value_error():
    assert issubclass(ConfigurationError, ValueError)


def test_repr_lists_sections():
    text = repr(Config.from_dict({}))
    assert '[inference]' in text
    assert 'batch_period = 300' in text
