import json
import math

import pytest

from sfdalab import config, synthdata
from sfdalab.config import ConfigError


def test_defaults_materialized():
    cfg = config.resolve({"seed": 3})
    assert set(cfg) == set(config.KEYS)
    spec = synthdata.default_spec(3)
    assert cfg["data.n_source"] == spec.n_source
    assert cfg["data.rotation_angle"] == spec.rotation_angle
    assert cfg["calib.tau"] == 0.8 and cfg["selection.mode"] == "expectation"


def test_resolve_is_idempotent():
    cfg = config.resolve({"seed": 1, "adapt.lr": 0.01, "data.preset": "imbalanced"})
    assert config.resolve(cfg) == cfg
    assert cfg["data.target_class_weights"] == [0.05, 0.35, 0.30, 0.30]


def test_missing_seed():
    with pytest.raises(ConfigError, match="'seed'"):
        config.resolve({"adapt.lr": 0.1})


@pytest.mark.parametrize("raw, key", [
    ({"seed": 0, "adapt.nope": 1}, "adapt.nope"),
    ({"seed": 0, "calib.tau": 1.5}, "calib.tau"),
    ({"seed": 0, "selection.mode": "greedy"}, "selection.mode"),
    ({"seed": 0, "adapt.epochs": 2.5}, "adapt.epochs"),
    ({"seed": 0, "ablation.use_cr": "yes"}, "ablation.use_cr"),
    ({"seed": 0, "model.arch": [2, 4]}, "model.arch"),
    ({"seed": 0, "augment.op_pool": ["blur"]}, "augment.op_pool"),
    ({"seed": 0, "data.class_cov_scale": -1.0}, "class_cov_scale"),
    ({"seed": 0, "data.n_source": 0}, "n_source"),
    ({"seed": 0, "ablation.use_cr": False}, "use_sampling"),
])
def test_errors_name_the_key(raw, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        config.resolve(raw)


def test_adapt_config_mapping():
    cfg = config.resolve({"seed": 4, "pseudo.temperature": 0.1, "augment.strong_magnitude": 0.7, "baseline.hard_labels": True})
    ad = config.adapt_config(cfg)
    assert ad.temperature == 0.1 and ad.augment.strong_magnitude == 0.7 and ad.hard_labels and ad.seed == 4
    back = config.from_adapt_config(ad)
    assert all(cfg[k] == v for k, v in back.items())


def test_load_manifest(tmp_path):
    cfg = config.resolve({"seed": 2})
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"tool": "sfdalab", "config": cfg}))
    assert config.load(path) == cfg


def test_load_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        config.load(bad)
    with pytest.raises(ConfigError):
        config.load(tmp_path / "missing.json")


def test_data_spec_override():
    cfg = config.resolve({"seed": 0, "data.rotation_angle": math.pi / 8, "data.n_target_test": 100})
    spec = config.data_spec(cfg, seed=5)
    assert spec.rotation_angle == math.pi / 8 and spec.n_target_test == 100 and spec.seed == 5
