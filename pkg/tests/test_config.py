import pytest

from fusionnet.config import ConfigFileError, ExperimentConfig, parse_pairs, toy_config


def test_text_roundtrip():
    cfg = toy_config()
    cfg.set("loss.box", 7.5)
    again = ExperimentConfig.from_text(cfg.to_text())
    assert again.to_dict() == cfg.to_dict()


def test_parse_sections_comments_and_types():
    text = """
    # header comment
    [train]
    epochs = 3   # inline
    nesterov = off
    model.fusion = 6
    """
    cfg = ExperimentConfig.from_text(text)
    assert cfg.train.epochs == 3 and cfg.train.nesterov is False and cfg.model.fusion == "6"


def test_unknown_key_and_bad_values():
    with pytest.raises(ConfigFileError):
        ExperimentConfig.from_text("train.nope = 1")
    with pytest.raises(ConfigFileError):
        ExperimentConfig.from_text("train.epochs = many")
    with pytest.raises(ConfigFileError):
        parse_pairs("just words")
    with pytest.raises(ConfigFileError):
        ExperimentConfig.load("/nonexistent/config.txt")


def test_defaults_follow_training_recipe():
    cfg = ExperimentConfig()
    assert (cfg.loss.box, cfg.loss.cls, cfg.loss.dfl) == (0.1, 0.5, 1.5)
    assert (cfg.data.h_gain, cfg.data.s_gain, cfg.data.v_gain) == (0.015, 0.7, 0.4)
    assert cfg.eval.fitness_preset == "default" and cfg.eval.nms_iou == 0.45


def test_toy_config_overrides():
    cfg = toy_config(**{"train.epochs": "2"})
    assert cfg.train.epochs == 2 and cfg.model.backbone == "toy" and cfg.model.width == 0.25
