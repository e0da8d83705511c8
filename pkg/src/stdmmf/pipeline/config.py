"""Training configuration and its flat ``key = value`` file format."""
import ast
import dataclasses
from dataclasses import dataclass, field, fields
from typing import Tuple

from ..encoders import BackboneConfig
from ..errors import ConfigError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

BACKBONES = {
    "resnet34": dict(width_schedule=(64, 128, 256, 512), block_counts=(3, 4, 6, 3)),
    "tiny": dict(width_schedule=(8, 16, 32, 64), block_counts=(1, 1, 1, 1)),
}


@dataclass
class TrainConfig:
    epochs: int = 65
    learning_rate: float = 0.0001
    momentum: float = 0.9
    weight_decay: float = 0.00001
    clip_len: int = 4
    input_size: int = 352
    loss_w1: float = 0.6
    loss_w2: float = 0.4
    gate_threshold: float = 0.5
    seed: int = 0
    disable_temporal: bool = False
    disable_ila: bool = False
    disable_ilw: bool = False
    disable_bma: bool = False
    backbone: str = "resnet34"
    aspp_channels: int = 64
    norm_mean: Tuple[float, float, float] = IMAGENET_MEAN
    norm_std: Tuple[float, float, float] = IMAGENET_STD
    pretrained: str = ""

    def __post_init__(self):
        self.norm_mean = tuple(float(v) for v in self.norm_mean)
        self.norm_std = tuple(float(v) for v in self.norm_std)
        self.validate()

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("epochs", f"must be >= 0, got {self.epochs}")
        if self.clip_len < 1:
            raise ConfigError("clip_len", f"must be >= 1, got {self.clip_len}")
        if self.input_size < 32 or self.input_size % 32:
            raise ConfigError("input_size", f"must be a positive multiple of 32, got {self.input_size}")
        for name in ("learning_rate", "momentum", "weight_decay", "loss_w1", "loss_w2"):
            if getattr(self, name) < 0:
                raise ConfigError(name, f"must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.gate_threshold <= 1.0:
            raise ConfigError("gate_threshold", f"must lie in [0, 1], got {self.gate_threshold}")
        if self.backbone not in BACKBONES:
            raise ConfigError("backbone", f"unknown preset {self.backbone!r}; choose from {sorted(BACKBONES)}")
        if len(self.norm_mean) != 3 or len(self.norm_std) != 3 or min(self.norm_std) <= 0:
            raise ConfigError("norm_std", "need three means and three positive standard deviations")
        return self

    def backbone_config(self):
        return BackboneConfig(aspp_out_channels=self.aspp_channels, input_size=self.input_size,
                              **BACKBONES[self.backbone]).validate()

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["norm_mean"] = list(self.norm_mean)
        d["norm_std"] = list(self.norm_std)
        return d

    @classmethod
    def from_dict(cls, values):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - names)
        if unknown:
            raise ConfigError(unknown[0], f"unknown config key(s): {', '.join(unknown)}")
        return cls(**values)


def _parse_value(name, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            value = ast.literal_eval(raw if raw.startswith(("(", "[")) else f"({raw})")
            return tuple(float(v) for v in value)
        return raw.strip("\"'")
    except (ValueError, SyntaxError):
        raise ConfigError(name, f"cannot parse {raw!r}") from None


def parse_config(text):
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    defaults = TrainConfig()
    names = {f.name for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in names:
            raise ConfigError(key, "unknown config key")
        values[key] = _parse_value(key, raw, getattr(defaults, key))
    return TrainConfig(**values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(config: TrainConfig):
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ", ".join(repr(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
