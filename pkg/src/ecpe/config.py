"""Declarative pipeline configuration (YAML with ${ENV} interpolation).

The parsed config is validated before any stage runs and serialized into
every output bundle for provenance.  Credentials never live in the file:
the remote backend reads its key from the environment variable named by
``emotion.backend.api_key_env``.
"""

from __future__ import annotations

import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .corpus import DEFAULT_SPLIT_SEED
from .errors import ConfigError

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass
class DataConfig:
    path: str = ""
    format: str = "task-json"


@dataclass
class SplitConfig:
    dev_fraction: float = 0.1
    seed: int = DEFAULT_SPLIT_SEED


@dataclass
class EmbedderConfig:
    kind: str = "hashing"  # hashing | transformer
    dim: int = 768
    model_name: str = "bert-base-uncased"


@dataclass
class RemoteBackendConfig:
    kind: str = "remote-finetuned"
    model: str = ""
    endpoint: str = ""
    api_key_env: str = "ECPE_API_KEY"
    temperature: float = 0.0
    max_output_tokens: int = 4
    max_concurrency: int = 4
    requests_per_second: float = 0.0


@dataclass
class EmotionConfig:
    source: str = "local"  # local | remote | gold
    backend: RemoteBackendConfig = field(default_factory=RemoteBackendConfig)
    instruction: str | None = None  # None -> shipped default
    #: few-shot exemplars as [previous, target, label] triples
    exemplars: list[list[str]] = field(default_factory=list)
    local_seed: int = 0
    local_max_iter: int = 1000
    local_C: float = 1.0


@dataclass
class CauseConfig:
    hidden_size: int = 256
    num_layers: int = 3
    ff_hidden: int = 256
    dropout: float = 0.1
    max_speakers: int = 9
    lr: float = 1e-4
    weight_decay: float = 1e-5
    epochs: int = 200
    batch_size: int = 32
    pos_weight: float = 1.0
    seed: int = 0
    checkpoint: str = "best"  # best | final


@dataclass
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "runs/default"
    cache_dir: str = ".ecpe_cache"
    split: SplitConfig = field(default_factory=SplitConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    emotion: EmotionConfig = field(default_factory=EmotionConfig)
    cause: CauseConfig = field(default_factory=CauseConfig)

    def validate(self) -> None:
        if not 0 < self.split.dev_fraction < 1:
            raise ConfigError(f"split.dev_fraction must be in (0, 1), got {self.split.dev_fraction}")
        if self.data.format not in ("task-json", "canonical-json"):
            raise ConfigError(f"data.format must be task-json or canonical-json, got {self.data.format!r}")
        if self.embedder.kind not in ("hashing", "transformer"):
            raise ConfigError(f"embedder.kind must be hashing or transformer, got {self.embedder.kind!r}")
        if self.emotion.source not in ("local", "remote", "gold"):
            raise ConfigError(f"emotion.source must be local, remote, or gold, got {self.emotion.source!r}")
        if self.cause.checkpoint not in ("best", "final"):
            raise ConfigError(f"cause.checkpoint must be best or final, got {self.cause.checkpoint!r}")
        for numeric, name, low in (
            (self.cause.epochs, "cause.epochs", 1),
            (self.cause.batch_size, "cause.batch_size", 1),
            (self.cause.max_speakers, "cause.max_speakers", 1),
            (self.embedder.dim, "embedder.dim", 1),
        ):
            if numeric < low:
                raise ConfigError(f"{name} must be >= {low}, got {numeric}")
        for triple in self.emotion.exemplars:
            if not (isinstance(triple, (list, tuple)) and len(triple) == 3):
                raise ConfigError("emotion.exemplars entries must be [previous, target, label] triples")

    def to_dict(self) -> dict:
        return asdict(self)


def _interpolate(value):
    if isinstance(value, str):
        def sub(match: re.Match) -> str:
            name = match.group(1)
            if name not in os.environ:
                raise ConfigError(f"environment variable {name} referenced in config is not set")
            return os.environ[name]

        return _ENV_RE.sub(sub, value)
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    return value


def _build(cls, raw: dict, where: str):
    known = {f: t for f, t in cls.__dataclass_fields__.items()}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return raw


def config_from_dict(raw: dict) -> PipelineConfig:
    raw = dict(raw or {})
    cfg = PipelineConfig()
    sections = {
        "data": (DataConfig, "data"),
        "split": (SplitConfig, "split"),
        "embedder": (EmbedderConfig, "embedder"),
        "cause": (CauseConfig, "cause"),
    }
    for key, (cls, where) in sections.items():
        if key in raw:
            setattr(cfg, key, cls(**_build(cls, raw.pop(key), where)))
    if "emotion" in raw:
        emo_raw = dict(raw.pop("emotion"))
        backend_raw = emo_raw.pop("backend", None)
        _build(EmotionConfig, {**emo_raw, "backend": None}, "emotion")
        emo = EmotionConfig(**emo_raw)
        if backend_raw is not None:
            emo.backend = RemoteBackendConfig(**_build(RemoteBackendConfig, backend_raw, "emotion.backend"))
        cfg.emotion = emo
    for key in ("output_dir", "cache_dir"):
        if key in raw:
            setattr(cfg, key, str(raw.pop(key)))
    if raw:
        raise ConfigError(f"unknown top-level config key(s): {sorted(raw)}")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return config_from_dict(_interpolate(raw))
