import pytest

from calorinet.config import SEED_ENV, ConfigError, ExperimentConfig, dump_config, load_config


def test_file_then_overrides(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text("[experiment]\nvariant = SiluCalNet\nseed = 3\n[scales]\nT = 250\n[train]\nepochs = 50\n")
    cfg = load_config(p, {"train": {"epochs": "60"}})
    assert cfg.variant == "SiluCalNet" and cfg.seed == 3
    assert cfg.scales.T == 250 and cfg.train.epochs == 60


def test_round_trip(tmp_path):
    cfg = load_config(None, {"experiment": {"seed": "9", "augment_enabled": "false"},
                             "augment": {"rotation_deg": "3"}, "model": {"sil_filters": "6,3"}})
    p = tmp_path / "c.ini"
    p.write_text(dump_config(cfg))
    back = load_config(p)
    assert dump_config(back) == dump_config(cfg)
    assert back.hyper.sil_filters == (6, 3) and back.augment.rotation_deg == 3.0


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        load_config(None, {"train": {"epoch": "3"}})
    with pytest.raises(ConfigError):
        load_config(None, {"bogus": {}})
    with pytest.raises(ConfigError):
        load_config(None, {"train": {"epochs": "many"}})


def test_seed_is_mandatory(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    with pytest.raises(ConfigError):
        ExperimentConfig().resolved_seed()
    monkeypatch.setenv(SEED_ENV, "17")
    assert ExperimentConfig().resolved_seed() == 17
    assert ExperimentConfig(seed=2).resolved_seed() == 2
    monkeypatch.setenv(SEED_ENV, "x")
    with pytest.raises(ConfigError):
        ExperimentConfig().resolved_seed()


def test_validation():
    with pytest.raises(ConfigError):
        load_config(None, {"scales": {"T": "2"}}).validate()
    with pytest.raises(ConfigError):
        load_config(None, {"experiment": {"val_fraction": "1.5"}}).validate()
