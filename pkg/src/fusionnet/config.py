"""Experiment configuration and its flat ``section.key = value`` text format.

Precedence, lowest to highest: dataclass defaults, config file, ``--set`` overrides,
dedicated command-line flags.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path


class ConfigFileError(ValueError):
    pass


@dataclass
class ModelConfig:
    backbone: str = "v5l"  # preset name or "toy"
    width: float = 0.25  # only used by the toy preset
    depth: float = 0.33
    fusion: str = "4"  # 1..6, "none" or a custom "a | b+c | - | d" row
    feder_mode: str = "toy_trainable"
    nc: int = 1


@dataclass
class LossConfig:
    box: float = 0.1
    cls: float = 0.5
    dfl: float = 1.5


@dataclass
class TrainConfig:
    epochs: int = 100
    batch: int = 64
    imgsz: int = 640
    lr0: float = 0.01
    lrf: float = 0.01  # final lr = lr0 * lrf, linear decay
    momentum: float = 0.937
    weight_decay: float = 0.0005
    warmup_epochs: float = 3.0
    nesterov: bool = True
    ema: bool = True
    clip_grad: float = 10.0
    seed: int = 0


@dataclass
class DataConfig:
    manifest: str = ""
    crop: str = "fixed_640"
    hsv: bool = True
    flip: bool = True
    mosaic: bool = True
    h_gain: float = 0.015
    s_gain: float = 0.7
    v_gain: float = 0.4
    flip_p: float = 0.5


@dataclass
class EvalConfig:
    fitness_preset: str = "default"
    conf: float = 0.25
    iou: float = 0.5
    nms_iou: float = 0.45
    size_filter: float = 0.0  # 0 disables


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def items(self):
        for sec in fields(self):
            section = getattr(self, sec.name)
            for f in fields(section):
                yield f"{sec.name}.{f.name}", getattr(section, f.name)

    def set(self, key: str, value):
        try:
            sec_name, name = key.split(".", 1)
            section = getattr(self, sec_name)
            if not is_dataclass(section):
                raise AttributeError
            current = getattr(section, name)
        except (ValueError, AttributeError):
            raise ConfigFileError(f"unknown config key {key!r}") from None
        setattr(section, name, _coerce(value, type(current), key))

    def update(self, pairs: dict):
        for k, v in pairs.items():
            self.set(k, v)
        return self

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.items())

    def to_dict(self) -> dict:
        return dict(self.items())

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        cfg = cls()
        cfg.update(parse_pairs(text, source))
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigFileError(f"config file not found: {path}")
        return cls.from_text(path.read_text(), str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(value, typ, key):
    if not isinstance(value, str):
        if typ is float and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, typ):
            return value
        value = str(value)
    value = value.strip()
    try:
        if typ is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return typ(value)
    except ValueError:
        raise ConfigFileError(f"{key}: cannot parse {value!r} as {typ.__name__}") from None


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; ``[section]`` headers prefix following keys."""
    out = {}
    prefix = ""
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            prefix = line[1:-1].strip() + "."
            continue
        if "=" not in line:
            raise ConfigFileError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k if "." in k else prefix + k] = v
    return out


def toy_config(**overrides) -> ExperimentConfig:
    """Small CPU-friendly settings for smoke training on the synthetic set."""
    cfg = ExperimentConfig()
    cfg.update({
        "model.backbone": "toy", "model.width": 0.25, "model.fusion": "4",
        "train.epochs": 5, "train.batch": 1, "train.lr0": 0.03, "train.imgsz": 192, "train.warmup_epochs": 0.0,
        "data.mosaic": False,
    })
    cfg.update(overrides)
    return cfg
