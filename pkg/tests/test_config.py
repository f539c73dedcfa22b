import pytest
import yaml

from vlcnoma import config
from vlcnoma.config import ConfigError, SimConfig


def test_defaults_match_reference_setup():
    cfg = SimConfig()
    assert (cfg.room.length_m, cfg.room.width_m, cfg.room.height_m) == (4.0, 8.0, 3.0)
    assert sorted(map(tuple, cfg.aps.positions_m)) == [(x, y) for x in (1.0, 3.0)
                                                       for y in (1.0, 3.0, 5.0, 7.0)]
    assert cfg.users.n_users == 20 and cfg.n_hp == 5
    assert cfg.noise_var == pytest.approx(2e-15)
    assert cfg.r_max_bps == 240e6


def test_round_trip(tmp_path):
    cfg = config.reduced()
    config.dump(cfg, tmp_path / "c.yaml")
    back = config.load(tmp_path / "c.yaml")
    assert back == cfg and back.digest() == cfg.digest()


def test_unknown_key_rejected(tmp_path):
    (tmp_path / "c.yaml").write_text("room:\n  lenght_m: 4\n")
    with pytest.raises(ConfigError, match="lenght_m"):
        config.load(tmp_path / "c.yaml")


@pytest.mark.parametrize("patch", [
    {"phy": {"sic_mode": "imperfect"}},
    {"users": {"v_min_mps": 2.0, "v_max_mps": 1.0}},
    {"aps": {"positions_m": [[9.0, 1.0]]}},
    {"ppo": {"discount": 1.0}},
    {"bo": {"n_init": 5, "n_trials": 3}},
    {"users": {"boundary_heading": "random"}},
    {"room": {"height_m": "tall"}},
])
def test_invalid_values_rejected(patch):
    with pytest.raises(ConfigError):
        config.from_dict(patch)


def test_partial_file_keeps_defaults(tmp_path):
    (tmp_path / "c.yaml").write_text(yaml.safe_dump({"users": {"n_users": 7}}))
    cfg = config.load(tmp_path / "c.yaml")
    assert cfg.users.n_users == 7 and cfg.phy.k_max == 10


def test_shipped_configs_load():
    assert config.load("configs/default.yaml") == SimConfig()
    assert config.load("configs/reduced.yaml") == config.reduced()


def test_reduced_layouts():
    assert config.reduced().n_aps == 4 and config.reduced().users.n_users == 10
    with pytest.raises(ConfigError):
        config.reduced(n_aps=3)
