"""Model and training configuration."""

from __future__ import annotations

import configparser
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

SIGMA_MIN = 0.11
BETA_MIN = 1e-6
# image sides must be a multiple of the combined latent + hyperlatent stride
SIZE_MULTIPLE = 64


@dataclass(frozen=True)
class ModelConfig:
    c_lat: int = 64
    c_hp: int = 32
    base_width: int = 64
    u1: float = 0.0
    u2: float = 1.0
    lmbda: float = 0.01
    group_size: int = 8
    downsample_factor_lat: int = 16
    downsample_factor_hp: int = 4

    def __post_init__(self):
        if not 0.0 <= self.u1 <= self.u2 <= 1.0:
            raise ValueError(f"need 0 <= u1 <= u2 <= 1, got u1={self.u1} u2={self.u2}")
        if self.u1 == self.u2 and self.u2 != 1.0:
            # only the degenerate u1 == u2 == 1 (no drop) is allowed
            raise ValueError("u1 == u2 is only allowed for u1 = u2 = 1")
        for name in ("c_lat", "c_hp", "base_width", "group_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.c_lat < self.group_size or self.c_hp < self.group_size:
            raise ValueError("c_lat and c_hp must each be >= group_size")
        if self.lmbda <= 0:
            raise ValueError("lambda must be positive")
        if (self.downsample_factor_lat, self.downsample_factor_hp) != (16, 4):
            raise ValueError("the transform stacks have fixed strides 16 and 4")
        if self.unit_count > 255:
            raise ValueError("ceil(c_lat / group_size) must fit in one byte")

    @property
    def unit_count(self) -> int:
        return math.ceil(self.c_lat / self.group_size)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


FULL_SCALE = ModelConfig(c_lat=192, c_hp=128, base_width=128)
DESK_SCALE = ModelConfig()


@dataclass
class TrainConfig:
    """Everything the ``train`` command reads from a config file.

    The file is plain ``key = value`` lines; the documented keys are
    ``lambda, u1, u2, c_lat, c_hp, base_width, group_size, lr, batch, epochs,
    seed, data_dir, out_dir`` plus the optional data keys below.
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-4
    batch: int = 8
    epochs: int = 20
    seed: int = 0
    data_dir: str = ""
    out_dir: str = "runs/train"
    patch_size: int = 128
    patches_per_image: int = 1
    val_fraction: float = 0.0
    max_steps: int = 0  # 0 = no limit
    checkpoint_every: int = 0  # steps; 0 = only at epoch ends

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        model = d.pop("model")
        model["lambda"] = model.pop("lmbda")
        del model["downsample_factor_lat"], model["downsample_factor_hp"]
        return {**model, **d}

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        values = dict(values)
        if "lambda" in values:
            values["lmbda"] = values.pop("lambda")
        model_names = {f.name for f in dataclasses.fields(ModelConfig)}
        own = {f.name: f for f in dataclasses.fields(cls) if f.name != "model"}
        unknown = set(values) - model_names - set(own)
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        model_kw = {}
        for k in model_names & set(values):
            model_kw[k] = _coerce(values[k], ModelConfig.__dataclass_fields__[k].type)
        kw = {k: _coerce(v, own[k].type) for k, v in values.items() if k in own}
        return cls(model=ModelConfig(**model_kw), **kw)

    @classmethod
    def load(cls, path: str | Path, overrides: dict | None = None) -> "TrainConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.read_string("[train]\n" + Path(path).read_text())
        values = dict(parser["train"])
        values.update(overrides or {})
        return cls.from_mapping(values)


def _coerce(value, type_name):
    if not isinstance(value, str):
        return value
    type_name = type_name if isinstance(type_name, str) else type_name.__name__
    if type_name == "int":
        return int(value)
    if type_name == "float":
        return float(value)
    return value
