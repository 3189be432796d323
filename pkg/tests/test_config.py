import pytest

from orca.config import (DEFAULTS, RunConfig, describe_defaults, load_config,
                         parse_value, read_config_file)
from orca.errors import ConfigError


def test_defaults_match_ledger():
    cfg = RunConfig()
    assert cfg["backbone.backend_id"] == "toy"
    assert cfg["backbone.timestep"] == 0
    assert cfg["backbone.taps"] == ["down_1", "down_2", "down_3", "mid"]
    assert cfg["condition.l_t"] == 4
    assert cfg["condition.l_v"] == 16
    assert cfg["compress.dim"] == 48
    assert cfg["policy.hidden_sizes"] == [256, 256]
    assert cfg["policy.lr"] == pytest.approx(1e-4)
    assert cfg["policy.epochs"] == 100
    assert cfg["policy.loss.kind"] == "mse"
    assert cfg["policy.obs.stack"] == 1
    assert cfg["eval.episodes"] == 25
    assert cfg["eval.every"] == 10


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        RunConfig({"backbone.depth": 4})
    with pytest.raises(ConfigError):
        RunConfig({"policy.optimizer": "sgd"})


def test_type_validation():
    with pytest.raises(ConfigError):
        RunConfig({"policy.epochs": "many"})
    with pytest.raises(ConfigError):
        RunConfig({"policy.epochs": 1.5})
    with pytest.raises(ConfigError):
        RunConfig({"condition.variant": "style_token"})
    assert RunConfig({"policy.lr": 1})["policy.lr"] == 1.0


def test_compress_taps_alias():
    cfg = RunConfig({"compress.taps": ["mid"]})
    assert cfg["backbone.taps"] == ["mid"]
    with pytest.raises(ConfigError):
        RunConfig({"compress.taps": ["mid"], "backbone.taps": ["down_1"]})
    same = RunConfig({"compress.taps": ["mid"], "backbone.taps": ["mid"]})
    assert same["backbone.taps"] == ["mid"]


def test_parse_value_forms():
    assert parse_value("3") == 3
    assert parse_value("0.5") == 0.5
    assert parse_value("true") is True
    assert parse_value("[1, 2, 3]") == [1, 2, 3]
    assert parse_value("down_1,mid") == ["down_1", "mid"]
    assert parse_value("orca") == "orca"
    assert parse_value("[]") == []


def test_config_file_roundtrip(tmp_path):
    cfg = RunConfig({"condition.variant": "coop", "run.seed": 3})
    path = tmp_path / "run.cfg"
    path.write_text(cfg.to_text())
    loaded = RunConfig(read_config_file(path))
    assert loaded.as_dict() == cfg.as_dict()
    assert loaded.config_hash() == cfg.config_hash()


def test_config_file_comments_and_errors(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\n\nrun.seed = 9\n")
    assert read_config_file(path)["run.seed"] == 9
    path.write_text("run.seed 9\n")
    with pytest.raises(ConfigError):
        read_config_file(path)
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "missing.cfg")


def test_flag_overrides_win_over_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("run.seed = 1\npolicy.epochs = 7\n")
    cfg = load_config(path, {"run.seed": 5})
    assert cfg["run.seed"] == 5
    assert cfg["policy.epochs"] == 7


def test_hash_changes_with_any_key():
    base = RunConfig().config_hash()
    assert RunConfig({"run.seed": 1}).config_hash() != base
    assert RunConfig({"condition.variant": "null"}).config_hash() != base
    assert RunConfig().config_hash() == base


def test_out_dir_env_override(monkeypatch, tmp_path):
    cfg = RunConfig({"run.out_dir": str(tmp_path / "a")})
    monkeypatch.setenv("ORCA_OUT", str(tmp_path / "b"))
    assert cfg.out_dir == tmp_path / "b"
    monkeypatch.delenv("ORCA_OUT")
    assert cfg.out_dir == tmp_path / "a"


def test_describe_defaults_lists_every_key():
    text = describe_defaults()
    for key in DEFAULTS:
        assert key in text
    assert "compress.taps" in text
    assert "ORCA_OUT" in text


def test_with_overrides_returns_new_config():
    cfg = RunConfig()
    other = cfg.with_overrides({"run.seed": 4})
    assert cfg["run.seed"] == 0
    assert other["run.seed"] == 4
