import json
import os

import pytest

from src.core.diffusion import LossConfig
from src.managers.config_manager import ConfigManager, RunConfig, parse_config
from src.utils.errors import ConfigError, ParameterError

EXAMPLE = os.path.join(os.path.dirname(__file__), "..", "..", "config_example.json")


def test_defaults():
    config = ConfigManager().config
    assert config.schedule.steps == 1000
    assert config.loss.weighting == "p2" and config.loss.c == 0.001
    assert config.data.labels == ("IDHC", "IDHNC", "IDHWT")
    assert config.metrics.k == 3
    assert config.train.lr == 1e-4


def test_example_file_matches_defaults():
    assert ConfigManager(EXAMPLE).config == RunConfig()


def test_partial_file_merges_defaults(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({'schedule': {'steps': 50}, 'loss': {'weighting': 'simple'}}))
    config = ConfigManager(str(path)).config
    assert config.schedule.steps == 50
    assert config.schedule.beta_end == 0.02
    assert isinstance(config.build_loss_config(), LossConfig)
    assert config.build_schedule().T == 50


def test_integer_accepted_for_float():
    assert parse_config({'loss': {'c': 0}}).loss.c == 0.0


def test_p2_k_zero_is_valid():
    config = parse_config({'loss': {'p2_k': 0.0}})
    assert config.loss.p2_k == 0.0
    assert config.build_loss_config().p2.k == 0.0


@pytest.mark.parametrize("data", [
    {'unknown': {}},
    {'schedule': {'extra': 1}},
    {'schedule': {'steps': '10'}},
    {'schedule': {'steps': True}},
    {'schedule': {'beta_start': 0.5, 'beta_end': 0.1}},
    {'loss': {'weighting': 'snr'}},
    {'loss': {'p2_k': -0.5}},
    {'loss': {'p2_gamma': -1.0}},
    {'model': {'embed_dim': 31}},
    {'model': {'activation': 'relu'}},
    {'model': {'hidden_dims': [64, 'a']}},
    {'data': {'patch': 500}},
    {'data': {'coverage': 0.0}},
    {'metrics': {'k': 0}},
    {'metrics': {'zscore': 1}},
    [],
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        ConfigManager(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        ConfigManager(str(bad))


def test_override_and_save(tmp_path):
    manager = ConfigManager()
    manager.override('train', steps=10, lr=None)
    assert manager.config.train.steps == 10
    assert manager.config.train.lr == 1e-4
    with pytest.raises(ConfigError):
        manager.override('train', batch=0)

    path = tmp_path / "saved.json"
    manager.save_config(str(path))
    assert json.loads(path.read_text(encoding='utf-8'))['train']['steps'] == 10
    assert ConfigManager(str(path)).config.train.steps == 10
    assert ConfigManager(str(path)).get_labels() == ["IDHC", "IDHNC", "IDHWT"]


def test_save_without_target():
    with pytest.raises(ParameterError):
        ConfigManager().save_config()
