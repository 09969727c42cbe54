from __future__ import annotations

import json

import pytest

from ragtemp.config import DEFAULT_TEMPERATURES, RunConfig, load_config
from ragtemp.errors import InvalidConfig
from ragtemp.pipeline import expand_conditions


def test_defaults():
    cfg = RunConfig()
    assert DEFAULT_TEMPERATURES == (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0)
    assert len(cfg.models) == 5 and len(cfg.perturbations) == 4
    groups, items = expand_conditions(cfg)
    assert groups == 440 and items == []


@pytest.mark.parametrize("changes", [
    {"temperatures": []}, {"temperatures": [0.0, 0.0]}, {"temperatures": [2.5]},
    {"perturbations": ["Shuffle"]}, {"perturbations": ["PrefixInjection"]},
    {"metrics": ["bleu"]}, {"runs_per_condition": 0}, {"models": []},
    {"on_empty": "ignore"}, {"models": [{"name": "x", "backend": "nowhere"}]},
])
def test_invalid(changes):
    with pytest.raises(InvalidConfig):
        RunConfig.from_dict(changes)


def test_unknown_keys_rejected():
    with pytest.raises(InvalidConfig, match="unknown config keys"):
        RunConfig.from_dict({"temprature": [0.1]})
    with pytest.raises(InvalidConfig):
        RunConfig.from_dict({"models": [{"name": "x", "kind": "y"}]})


def test_yaml_and_json_loading(tmp_path):
    y = tmp_path / "c.yaml"
    y.write_text("dataset: data.json\ntemperatures: [0, 1]\nmodels:\n  - {name: a, backend: mock}\n")
    cfg = load_config(y, seed=9)
    assert cfg.temperatures == (0.0, 1.0) and cfg.seed == 9
    assert cfg.dataset == str(tmp_path / "data.json")
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"temperatures": [0, 1], "models": [{"name": "a", "backend": "mock"}],
                             "dataset": str(tmp_path / "data.json"), "seed": 9}))
    assert load_config(j).digest() == cfg.digest()
    with pytest.raises(InvalidConfig):
        load_config(tmp_path / "missing.yaml")


def test_digest_ignores_operational_fields():
    a = RunConfig()
    assert a.digest() == a.replace(out_dir="elsewhere", concurrency=16, cache_dir="/tmp/c").digest()
    assert a.digest() != a.replace(seed=1).digest()
    assert a.digest() != a.replace(temperatures=(0.0, 1.0)).digest()
