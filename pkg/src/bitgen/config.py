"""Experiment configuration: nested dataclasses, YAML loading with strict
unknown-key rejection, dotted-path overrides, and a content digest recorded
in checkpoints and run manifests.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .data import DatasetSpec
from .generator import GeneratorConfig
from .losses import DiscriminatorConfig, LossWeights
from .quantizers import LookupFreeQuantizer, VectorQuantizer
from .sampler import SampleConfig
from .tokenizer import AutoencoderConfig, TokenizerModel
from .trainer import OptimConfig


class ConfigError(ValueError):
    pass


@dataclass
class QuantizerSpec:
    kind: str = "lfq"             # "lfq" or "vq"
    num_bits: int = 12
    codebook_size: int = 1024
    codebook_dim: int = 256
    entropy_weight: float = 0.02
    entropy_temperature: float = 0.01

    def __post_init__(self):
        if self.kind not in ("lfq", "vq"):
            raise ConfigError(f"quantizer kind must be 'lfq' or 'vq', got {self.kind!r}")
        if self.num_bits < 1 or self.codebook_size < 1:
            raise ConfigError("quantizer sizes must be positive")


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    quantizer: QuantizerSpec = field(default_factory=QuantizerSpec)
    loss: LossWeights = field(default_factory=LossWeights)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    stage1_optim: OptimConfig = field(default_factory=OptimConfig.stage1)
    stage2_optim: OptimConfig = field(default_factory=OptimConfig.stage2)
    sample: SampleConfig = field(default_factory=SampleConfig)


def build_quantizer(spec: QuantizerSpec, latent_dim: int):
    if spec.kind == "vq":
        return VectorQuantizer(spec.codebook_size, spec.codebook_dim)
    return LookupFreeQuantizer(latent_dim, spec.num_bits,
                               entropy_weight=spec.entropy_weight,
                               entropy_temperature=spec.entropy_temperature)


def build_tokenizer(cfg: ExperimentConfig) -> TokenizerModel:
    return TokenizerModel(cfg.autoencoder, build_quantizer(cfg.quantizer,
                                                           cfg.autoencoder.latent_dim))


def check_stage_compatibility(cfg: ExperimentConfig) -> None:
    """Stage-II models consume Stage-I tokens; their widths must agree."""
    if cfg.quantizer.kind != "lfq":
        raise ConfigError("stage-2 masked-bit training requires the 'lfq' quantizer")
    if cfg.generator.num_bits != cfg.quantizer.num_bits:
        raise ConfigError(
            f"generator bit width {cfg.generator.num_bits} does not match "
            f"tokenizer bit width {cfg.quantizer.num_bits}")


# --------------------------------------------------------------------------- #
# dict <-> dataclass plumbing
# --------------------------------------------------------------------------- #

def to_dict(cfg) -> dict:
    """Plain nested dict with JSON-friendly values (tuples become lists)."""
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def config_digest(cfg: ExperimentConfig) -> str:
    canon = json.dumps(to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(canon).hexdigest()


def tokenizer_digest(cfg: ExperimentConfig) -> str:
    """Digest of only the sections that determine token semantics; recorded
    in token datasets so Stage II rejects tokens from a different tokenizer.
    """
    sub = {"autoencoder": to_dict(cfg.autoencoder), "quantizer": to_dict(cfg.quantizer)}
    return hashlib.sha256(json.dumps(sub, sort_keys=True).encode()).hexdigest()


def stage_digest(cfg: ExperimentConfig, stage: int) -> str:
    """Digest guarding checkpoints: stage 1 covers the tokenizer/GAN recipe,
    stage 2 the generator recipe (plus the token semantics it consumes).
    """
    if stage == 1:
        sub = {"autoencoder": to_dict(cfg.autoencoder),
               "quantizer": to_dict(cfg.quantizer),
               "discriminator": to_dict(cfg.discriminator),
               "loss": to_dict(cfg.loss), "optim": to_dict(cfg.stage1_optim)}
    elif stage == 2:
        sub = {"generator": to_dict(cfg.generator),
               "quantizer_bits": cfg.quantizer.num_bits,
               "optim": to_dict(cfg.stage2_optim)}
    else:
        raise ConfigError(f"unknown stage {stage}")
    return hashlib.sha256(json.dumps(sub, sort_keys=True).encode()).hexdigest()


def _coerce(value, f: dataclasses.Field, path: str):
    target = f.type
    if target is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if target is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path} must be a list")
        return tuple(value)
    return value


def _build(cls, data: dict, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"section {path or '<root>'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key: {path}{key}")
        f = fields[key]
        if dataclasses.is_dataclass(f.type):
            kwargs[key] = _build(f.type, value or {}, f"{path}{key}.")
        else:
            kwargs[key] = _coerce(value, f, f"{path}{key}")
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config section {path or '<root>'}: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {})


def apply_overrides(data: dict, overrides) -> dict:
    """Apply 'a.b.c=value' strings onto a raw config dict (values parsed as
    YAML scalars, so numbers and booleans come out typed).
    """
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        if not all(keys):
            raise ConfigError(f"override {item!r} has an empty path segment")
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {dotted!r} crosses a scalar")
        node[keys[-1]] = yaml.safe_load(raw)
    return data


def load_config(path=None, overrides=None) -> ExperimentConfig:
    data = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("top-level config must be a mapping")
        data = loaded
    apply_overrides(data, overrides)
    return from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=False)
