import pytest

from gacnn.config import TrainConfig, load_config, parse_config_text
from gacnn.errors import ConfigError


def test_roundtrip_text():
    cfg = TrainConfig().with_overrides(["pooling.method=gap", "backbone.channels=4,8,8,8,8"])
    back = parse_config_text(cfg.to_text())
    assert back == cfg
    assert back.fingerprint() == cfg.fingerprint()


def test_override_wins(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("# comment\ntraining.epochs = 5\noam.alpha = 0.2  # trailing\n")
    cfg = load_config(p, ["training.epochs=7"])
    assert cfg.training.epochs == 7 and cfg.oam.alpha == 0.2


@pytest.mark.parametrize("key", ["training.epoch=3", "nosuch.key=1", "epochs=3"])
def test_unknown_key(key):
    with pytest.raises(ConfigError, match="unknown config key"):
        TrainConfig().with_overrides([key])


@pytest.mark.parametrize("override", ["oam.alpha=1.0", "gsc.stages=0", "pooling.k=0", "pooling.method=avg",
                                      "training.eval_mode=maybe", "data.image_size=60", "training.epochs=x",
                                      "oam.fine_pass_start=-1", "data.glyph_contrast=0"])
def test_invalid_values(override):
    with pytest.raises(ConfigError):
        TrainConfig().with_overrides([override])


def test_overrides_do_not_mutate_base():
    base = TrainConfig()
    base.with_overrides(["training.epochs=1"])
    assert base.training.epochs == 60


def test_fingerprint_changes():
    assert TrainConfig().fingerprint() != TrainConfig().with_overrides(["oam.alpha=0.4"]).fingerprint()


def test_booleans():
    cfg = TrainConfig().with_overrides({"oam.fine_pass_training": "off", "training.flip": "yes"})
    assert cfg.oam.fine_pass_training is False and cfg.training.flip is True
