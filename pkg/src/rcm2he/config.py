"""Declarative run configuration: one YAML document drives every command.

Every key has a default; unknown keys are rejected so typos fail loudly.
A single master seed is split into per-purpose sub-seeds by a documented
hash (sha256 of "master:purpose"), so toggling one pipeline stage does not
perturb another stage's randomness. The fully resolved configuration is
echoed into each run directory.
"""

from dataclasses import dataclass, field, fields, asdict, replace
from pathlib import Path

import yaml

from .model import DiscriminatorSpec, GeneratorSpec
from .synthgen import PhantomConfig
from .training import TrainingConfig, derive_seed
from .virtual_he import StainCoefficients


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


@dataclass(frozen=True)
class CorpusParams:
    patients: int = 8
    images_per_patient: object = 25       # int, or one count per patient


@dataclass(frozen=True)
class PreprocessParams:
    normalize_lo: float = 1.0
    normalize_hi: float = 99.0
    smooth_radius: int = 5
    inpaint_tol: float = 1e-5
    inpaint_max_iter: int = 10_000
    mask_percentile: float = 99.9
    crop_size: int = 0                    # 0 disables random cropping
    crop_count: int = 10


@dataclass(frozen=True)
class ModelParams:
    in_channels: int = 1
    out_channels: int = 1
    levels: int = 6
    base_width: int = 16
    norm: str = "batch"
    dropout_rate: float = 0.5
    dropout_levels: object = None
    disc_base_width: int = 0              # 0 = same as base_width
    patch_discriminator: bool = False

    def gen_spec(self) -> GeneratorSpec:
        levels = (tuple(self.dropout_levels)
                  if self.dropout_levels is not None else None)
        return GeneratorSpec(in_channels=self.in_channels, out_channels=self.out_channels,
                             levels=self.levels, base_width=self.base_width,
                             dropout_levels=levels, dropout_rate=self.dropout_rate,
                             norm=self.norm)

    def disc_spec(self) -> DiscriminatorSpec:
        return DiscriminatorSpec(base_width=self.disc_base_width or self.base_width,
                                 conditional=True, patch_output=self.patch_discriminator)


@dataclass(frozen=True)
class SplitParams:
    test_patients: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    corpus: CorpusParams = field(default_factory=CorpusParams)
    stain: StainCoefficients = field(default_factory=StainCoefficients)
    preprocess: PreprocessParams = field(default_factory=PreprocessParams)
    model: ModelParams = field(default_factory=ModelParams)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    split: SplitParams = field(default_factory=SplitParams)


_SECTIONS = {
    "phantom": PhantomConfig,
    "corpus": CorpusParams,
    "stain": StainCoefficients,
    "preprocess": PreprocessParams,
    "model": ModelParams,
    "training": TrainingConfig,
    "split": SplitParams,
}

_TUPLE_KEYS = {"nuclei_count_range", "nuclei_radius_range", "rcm_mix", "k_h", "k_e",
               "test_patients", "dropout_levels"}


def _build_section(cls, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_KEYS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {section!r}: {exc}") from exc


def parse_config(data: dict) -> RunConfig:
    """Build a resolved RunConfig from a raw mapping, deriving sub-seeds."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")

    parts = {"seed": seed}
    for name, cls in _SECTIONS.items():
        section = dict(data.get(name) or {})
        if name == "phantom" and "seed" not in section:
            section["seed"] = derive_seed(seed, "synth")
        if name == "training" and "seed" not in section:
            section["seed"] = derive_seed(seed, "train")
        parts[name] = _build_section(cls, section, name)
    return RunConfig(**parts)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(data)


def dump_config(config: RunConfig) -> str:
    """Serialize the fully resolved config (defaults applied) as YAML."""
    return yaml.safe_dump(asdict(config), sort_keys=False)


def with_training(config: RunConfig, **overrides) -> RunConfig:
    return replace(config, training=replace(config.training, **overrides))
