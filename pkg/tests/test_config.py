import json

import pytest

from epsfp.config import CONFIG_DIR_ENV, RunConfig, load_config
from epsfp.errors import ValidationError


def test_default_round_trip():
    cfg = RunConfig()
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_partial_config_keeps_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 9, "population": {"n_devices": 4}, "train": {"epochs": 2}}))
    cfg = load_config(p)
    assert cfg.seed == 9 and cfg.population.n_devices == 4 and cfg.train.epochs == 2
    assert cfg.frames_per_device == 100 and len(cfg.population.build()) == 4


@pytest.mark.parametrize("doc", [{"sede": 1}, {"population": {"devices": 3}}, {"train": {"lr": 1}},
                                 {"scenario": {"name": "fixed-location", "x": 0}}, {"models": "eps_cnn"},
                                 {"models": ["svm"]}, {"frames_per_device": 0}, {"population": []}])
def test_strict_rejection(doc):
    with pytest.raises(ValidationError):
        RunConfig.from_dict(doc)


def test_invalid_json(tmp_path):
    (tmp_path / "bad.json").write_text("{seed: 1")
    with pytest.raises(ValidationError):
        load_config(tmp_path / "bad.json")


def test_env_directory_lookup(tmp_path, monkeypatch):
    (tmp_path / "named.json").write_text(json.dumps({"seed": 77}))
    monkeypatch.setenv(CONFIG_DIR_ENV, str(tmp_path))
    assert load_config("named.json").seed == 77
    monkeypatch.delenv(CONFIG_DIR_ENV)
    with pytest.raises(FileNotFoundError):
        load_config("named.json")
