import pytest

from lemsim.config import ExperimentConfig, load_config, parse_config_text, with_overrides
from lemsim.data import ConfigError


def test_defaults_match_hyperparameter_table():
    c = ExperimentConfig()
    assert (c.epochs, c.episodes_per_epoch, c.gamma) == (100, 48, 0.95)
    assert (c.actor_lr, c.critic_lr, c.vaegan_lr) == (0.01, 0.1, 0.001)
    assert (c.deviation_mean, c.deviation_sd, c.balance_factor) == (0.4, 0.1, 1.0)
    assert c.actor_hidden == (64,) and c.critic_hidden == (64, 64)
    assert c.encoder_dims == (24, 32, 16) and c.latent_dim == 24
    assert c.decoder_dims == (24, 16, 32, 24) and c.discriminator_dims == (24, 32, 16, 1)
    assert c.horizon_h == 48 and c.efficiency == 0.7 and c.demand_noise_sd == 0.05


def test_file_then_overrides(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("# demo\nmarket = LEM_B\nepochs = 7  # short\nmanipulation = yes\nactor_hidden = 32,32\n")
    c = load_config(p)
    assert c.market == "LEM_B" and c.epochs == 7 and c.manipulation is True
    assert c.actor_hidden == (32, 32)
    c = load_config(p, {"epochs": 3, "market": None})
    assert c.epochs == 3 and c.market == "LEM_B"


def test_round_trip_text():
    c = ExperimentConfig(market="LEM_B", battery_kwh=13.0, manipulation=True)
    again = with_overrides(ExperimentConfig(), parse_config_text(c.to_text()))
    assert again.to_dict() == c.to_dict()


@pytest.mark.parametrize("text,msg", [
    ("colour = red", "unknown"),
    ("epochs = 2\nepochs = 3", "duplicate"),
    ("epochs", "key = value"),
    ("epochs = many", "cannot parse"),
    ("market = LEM_Z", "market"),
    ("gamma = 1.0", "gamma"),
    ("risk_aversion = 1", "risk_aversion"),
])
def test_bad_config(tmp_path, text, msg):
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    with pytest.raises(ConfigError, match=msg):
        load_config(p)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_replace_validates():
    with pytest.raises(ConfigError):
        ExperimentConfig().replace(market="custom")
    assert ExperimentConfig().replace(market="custom", group_counts="1,1,1,1").group_counts == (1, 1, 1, 1)
