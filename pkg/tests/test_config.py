import json

import pytest

from needletrack.config import (
    ConfigError, apply_overrides, default_config_dict, expand_sweep, load_config_file, parse_config,
)


def test_default_config_parses():
    cfg = parse_config(default_config_dict())
    assert cfg.needle.radius == 5.4
    assert cfg.experiment.steps == 100 and cfg.experiment.trials == 20
    assert [f.name for f in cfg.filters] == ["PF", "cPFrp"]


def test_overrides_dotted_and_indexed():
    raw = apply_overrides(default_config_dict(), ["experiment.trials=3", "filters.1.n=50",
                                                  "experiment.trajectory=\"static\"", "label=abc"])
    cfg = parse_config(raw)
    assert cfg.experiment.trials == 3 and cfg.filters[1].n == 50
    assert cfg.experiment.trajectory == "static" and cfg.label == "abc"


@pytest.mark.parametrize("item", ["noequals", "filters.9.n=1", "filters.x.n=1", "experiment.trials.x=1"])
def test_bad_overrides(item):
    with pytest.raises(ConfigError):
        apply_overrides(default_config_dict(), [item])


def test_overrides_do_not_mutate_input():
    raw = default_config_dict()
    apply_overrides(raw, ["experiment.trials=1"])
    assert raw["experiment"]["trials"] == 20


@pytest.mark.parametrize("sets", [
    ["bogus=1"], ["needle.radius_mm=-1"], ["experiment.trials=0"], ["experiment.sigma_n_px=-1"],
    ["experiment.trajectory=\"zigzag\""], ["filters.0.name=\"EKF\""], ["filters.0.n=0"],
    ["observation.sigma_o_px=0"], ["bounds.d_min=5"], ["rig.fx=-1"], ["experiment.unknown=1"],
    ["filters=[]"],
])
def test_invalid_configs(sets):
    with pytest.raises(ConfigError):
        parse_config(apply_overrides(default_config_dict(), sets))


def test_malformed_json_reports_position(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "experiment": {"trials": 2,}\n}')
    with pytest.raises(ConfigError, match=r"line 2, column"):
        load_config_file(p)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "nope.json")


def test_sweep_labels_and_values():
    raw = default_config_dict()
    raw["sweep"] = {"experiment.sigma_n_px": [3, 4], "observation.sigma_o_px": [5.0, 6.5]}
    cfgs = expand_sweep(raw)
    assert [c.label for c in cfgs] == ["sigma_n_px=3,sigma_o_px=5", "sigma_n_px=3,sigma_o_px=6.5",
                                       "sigma_n_px=4,sigma_o_px=5", "sigma_n_px=4,sigma_o_px=6.5"]
    assert cfgs[3].observation.sigma_o == 6.5 and cfgs[3].experiment.sigma_n_px == 4


def test_shipped_config_is_valid_json():
    from importlib import resources
    json.loads(resources.files("needletrack").joinpath("default_config.json").read_text())
