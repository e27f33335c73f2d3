"""Run configuration: three sections of typed fields, read from flat text.

The text format is one ``key = value`` per line with ``#`` comments. Keys are
``section.field`` (e.g. ``model.dim``) or a bare field name when that name is
unique across sections (e.g. ``lr``). Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .fuzzy import MembershipParams, check_trapezoid

FUSION_MODES = ("fca", "add", "cross-attn", "none")
BRANCHES = ("fine", "medium", "coarse")


@dataclass
class ModelConfig:
    image_size: int = 64
    patch: int = 8
    r: int = 2
    c_coarse: int = 3
    c_medium: int = 12
    c_fine: int = 48
    widths: tuple[int, int] = (8, 16)
    dim: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    num_classes: int = 2
    fusion: str = "fca"
    branches: tuple[str, ...] = BRANCHES
    mlp_mode: str = "literal"
    head_norm: str = "pre"
    input_norm: str = "center"
    init_seed: int = 0

    def validate(self) -> None:
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if not self.branches or any(b not in BRANCHES for b in self.branches):
            raise ConfigError(f"branches must be a non-empty subset of {BRANCHES}, got {self.branches}")
        if len(set(self.branches)) != len(self.branches):
            raise ConfigError(f"duplicate branch in {self.branches}")
        if self.mlp_mode not in ("literal", "prenorm"):
            raise ConfigError(f"mlp_mode must be 'literal' or 'prenorm', got {self.mlp_mode!r}")
        if self.head_norm not in ("post", "pre"):
            raise ConfigError(f"head_norm must be 'post' or 'pre', got {self.head_norm!r}")
        if self.input_norm not in ("center", "none"):
            raise ConfigError(f"input_norm must be 'center' or 'none', got {self.input_norm!r}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.r < 1 or self.patch % (2 * self.r):
            raise ConfigError(f"patch {self.patch} must be divisible by 2r = {2 * self.r}")
        if self.image_size % self.patch:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch {self.patch}")


@dataclass
class FuzzyConfig:
    alpha: float = 10.0
    beta: float = 0.5
    a: float = 0.1
    b: float = 0.3
    c: float = 0.7
    d: float = 0.9
    bias: float = 0.0
    gaussian_mode: str = "peak"
    clamp: bool = True

    def validate(self) -> None:
        try:
            check_trapezoid(self.a, self.b, self.c, self.d)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.gaussian_mode not in ("peak", "raw"):
            raise ConfigError(f"gaussian_mode must be 'peak' or 'raw', got {self.gaussian_mode!r}")

    def membership(self) -> MembershipParams:
        return MembershipParams(alpha=self.alpha, beta=self.beta, a=self.a, b=self.b, c=self.c,
                                d=self.d, bias=self.bias, gaussian_mode=self.gaussian_mode)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr: float = 0.001
    decay: float = 0.01
    decay_mode: str = "weight"
    seed: int = 0
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    augment: bool = True

    def validate(self) -> None:
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.decay_mode not in ("weight", "lr-per-epoch"):
            raise ConfigError(f"decay_mode must be 'weight' or 'lr-per-epoch', got {self.decay_mode!r}")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigError(f"split ratios must be 3 non-negative values summing to 1, got {self.split}")


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    fuzzy: FuzzyConfig = field(default_factory=FuzzyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "Config":
        self.model.validate()
        self.fuzzy.validate()
        self.train.validate()
        return self

    def copy(self) -> "Config":
        return dataclasses.replace(
            self,
            model=dataclasses.replace(self.model),
            fuzzy=dataclasses.replace(self.fuzzy),
            train=dataclasses.replace(self.train),
        )

    def set(self, key: str, value: str) -> None:
        section, name = _resolve(key)
        target = getattr(self, section)
        current = getattr(target, name)
        setattr(target, name, _coerce(value, current, key))

    def apply(self, overrides) -> "Config":
        for key, value in overrides.items() if isinstance(overrides, dict) else overrides:
            self.set(key, str(value))
        return self

    def to_text(self) -> str:
        lines = []
        for section in ("model", "fuzzy", "train"):
            for f in fields(getattr(self, section)):
                lines.append(f"{section}.{f.name} = {_format(getattr(getattr(self, section), f.name))}")
        return "\n".join(lines) + "\n"


# presets
def desk_config() -> Config:
    """64x64 inputs, D=64, L=2, h=4, two classes."""
    return Config()


def full_config() -> Config:
    """224x224 inputs with the 3/12/48 channel progression and P=16."""
    cfg = Config()
    cfg.model.image_size, cfg.model.patch, cfg.model.dim = 224, 16, 768
    cfg.train.batch_size, cfg.train.lr = 64, 0.001
    return cfg


def _sections() -> dict[str, dict[str, object]]:
    return {
        "model": {f.name: f for f in fields(ModelConfig)},
        "fuzzy": {f.name: f for f in fields(FuzzyConfig)},
        "train": {f.name: f for f in fields(TrainConfig)},
    }


def _resolve(key: str) -> tuple[str, str]:
    key = key.strip()
    sections = _sections()
    if "." in key:
        section, name = key.split(".", 1)
        if section in sections and name in sections[section]:
            return section, name
        raise ConfigError(f"unknown config key {key!r}")
    owners = [s for s, names in sections.items() if key in names]
    if len(owners) == 1:
        return owners[0], key
    if not owners:
        raise ConfigError(f"unknown config key {key!r}")
    raise ConfigError(f"ambiguous config key {key!r}; use one of {[f'{s}.{key}' for s in owners]}")


def _coerce(raw: str, current, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(current[0]) if current else str
            return tuple(kind(s) for s in items)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for {key}") from exc


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, base: Config | None = None) -> Config:
    cfg = base.copy() if base else Config()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        cfg.set(key, value)
    return cfg


def load_config(path=None, overrides=(), env=None) -> Config:
    """File config, then ``key=value`` overrides, then ``FMDNN_SEED`` from the environment."""
    cfg = parse_config_text(Path(path).read_text()) if path else Config()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key, value)
    env = os.environ if env is None else env
    if env.get("FMDNN_SEED"):
        cfg.set("train.seed", env["FMDNN_SEED"])
    return cfg.validate()
