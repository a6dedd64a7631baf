import pytest
import yaml

from gaets.errors import ConfigurationError
from gaets.runconfig import (
    DEFAULT_CONFIG,
    config_hash,
    default_run_id,
    dump_resolved,
    load_run_config,
    train_config_for,
)


def test_defaults_returned_without_file():
    config = load_run_config(None)
    assert config["window"]["input_horizon"] == 80
    assert config["training"]["mode"] == "GAETS"
    assert config["seeds"] == [0]


def test_file_merge_and_unknown_key(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"window": {"stride": 3}}), encoding="utf-8")
    config = load_run_config(path)
    assert config["window"]["stride"] == 3
    assert config["window"]["input_horizon"] == 80

    path.write_text(yaml.safe_dump({"window": {"strid": 3}}), encoding="utf-8")
    with pytest.raises(ConfigurationError, match="window.strid"):
        load_run_config(path)


def test_dotted_overrides():
    config = load_run_config(None, {"training.mode": "GTS", "seeds": [1, 2]})
    assert config["training"]["mode"] == "GTS"
    assert config["seeds"] == [1, 2]
    with pytest.raises(ConfigurationError):
        load_run_config(None, {"training.bogus": 1})


def test_none_override_skipped():
    config = load_run_config(None, {"training.mode": None})
    assert config["training"]["mode"] == "GAETS"


def test_synthetic_defaults_filled(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"data": {"synthetic": {"n_vars": 4}}}),
                    encoding="utf-8")
    config = load_run_config(path)
    syn = config["data"]["synthetic"]
    assert syn["n_vars"] == 4
    assert syn["length"] == 4000
    assert syn["nonlinearity"] == "tanh"


def test_multiple_sources_rejected(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(
        yaml.safe_dump({"data": {"cache": "x.npz", "csv": ["y.csv"]}}),
        encoding="utf-8",
    )
    with pytest.raises(ConfigurationError, match="one data source"):
        load_run_config(path)


def test_seed_validation():
    with pytest.raises(ConfigurationError):
        load_run_config(None, {"seeds": []})
    with pytest.raises(ConfigurationError):
        load_run_config(None, {"seeds": [1, 1]})


def test_hash_ignores_machine_keys():
    a = load_run_config(None)
    b = load_run_config(None, {"out_root": "/elsewhere", "run_id": "zzz"})
    assert config_hash(a) == config_hash(b)
    c = load_run_config(None, {"training.epochs": 7})
    assert config_hash(a) != config_hash(c)


def test_default_run_id_shape():
    config = load_run_config(None, {"training.mode": "GTS"})
    run_id = default_run_id(config)
    assert run_id.startswith("gts-h40-")


def test_train_config_for_carries_window():
    config = load_run_config(None, {"window.output_horizon": 120})
    tc = train_config_for(config, seed=3)
    assert tc.output_horizon == 120
    assert tc.seed == 3


def test_dump_resolved_round_trip(tmp_path):
    config = load_run_config(None, {"training.epochs": 2})
    path = tmp_path / "resolved.yaml"
    dump_resolved(config, path)
    loaded = yaml.safe_load(path.read_text())
    assert loaded["config_hash"] == config_hash(config)
    assert loaded["training"]["epochs"] == 2
    # Resolved file has every default expanded.
    assert set(loaded) == set(DEFAULT_CONFIG) | {"config_hash"}
