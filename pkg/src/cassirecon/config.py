"""Experiment configuration as line-oriented ``key = value`` text."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields

from .dst import DSTConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # model
    stages: int = 2
    base_channels: int = 8
    blocks_per_level: tuple = (1, 1, 1)
    heads_per_level: tuple = (1, 1, 1)
    dense_growth: typing.Optional[int] = None
    gdfn_expansion: float = 2.66
    global_residual: bool = True
    zero_head: bool = True
    identity_init: bool = True
    share_denoiser: bool = False
    beta_init: float = 1.0
    # optimisation
    epochs: int = 10
    steps_per_epoch: int = 30
    lr_max: float = 1e-2
    warmup_epochs: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    charbonnier_eps: float = 1e-3
    dtype: str = "float64"
    # data and physics
    scene_size: int = 32
    patch_size: int = 32
    bands: int = 8
    n_scenes: int = 66
    n_heldout: int = 2
    dispersion_step: int = 1
    noise: bool = True
    noise_bits: int = 11
    augment: bool = True
    augment_mask: bool = False
    seed: int = 0
    # paths ("" = generate / do not write)
    data_dir: str = ""
    mask_path: str = ""
    checkpoint_dir: str = ""
    report_path: str = ""

    def __post_init__(self):
        self.blocks_per_level = tuple(self.blocks_per_level)
        self.heads_per_level = tuple(self.heads_per_level)
        for name in ("stages", "base_channels", "epochs", "steps_per_epoch", "batch_size", "scene_size",
                     "patch_size", "bands", "n_scenes", "noise_bits"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr_max < 0:
            raise ConfigError("lr_max must be nonnegative")
        if self.dispersion_step < 0 or self.warmup_epochs < 0:
            raise ConfigError("dispersion_step and warmup_epochs must be nonnegative")
        if self.warmup_epochs >= self.epochs:
            raise ConfigError("warmup_epochs must be smaller than epochs")
        if self.patch_size > self.scene_size or self.patch_size % 4:
            raise ConfigError("patch_size must be a multiple of 4 no larger than scene_size")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def total_steps(self):
        return self.epochs * self.steps_per_epoch

    @property
    def warmup_steps(self):
        return self.warmup_epochs * self.steps_per_epoch

    def dst_config(self) -> DSTConfig:
        return DSTConfig(self.base_channels, self.blocks_per_level, self.heads_per_level, self.dense_growth,
                         self.gdfn_expansion, self.global_residual, self.zero_head, self.identity_init)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    # -- text format --------------------------------------------------------
    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        hints = typing.get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                values[key] = _parse(val, hints[key])
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.loads(fh.read())


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, tp):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        if text.lower() == "none":
            return None
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    if tp is bool:
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if tp is tuple:
        return tuple(int(x) for x in text.split(",") if x.strip())
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    return text
