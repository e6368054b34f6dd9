"""Experiment configuration: JSON sections mapped onto dataclasses.

Unknown keys and ill-typed values raise :class:`ConfigError` carrying the
dotted key path.  :func:`reference` renders every key with its default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .datagen import GenConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass
class DataConfig:
    dir: str = "data"
    train: str = "train.csv"
    test: str = "test.csv"
    bucket_count: int | list[int] = 4096
    gen: GenConfig = field(default_factory=GenConfig)


@dataclass
class ModelConfig:
    variant: str = "Dual"
    embed_dim: int = 16
    layers: int = 1
    dnn_widths: list[int] = field(default_factory=lambda: [64, 32])
    embed_std: float = 0.01
    qkv_projection: bool = False
    residual: bool = False
    layer_norm: bool = False
    zero_init_output: bool = False
    embedding_hash_seed: int = 0xE1BED


@dataclass
class CodebookConfig:
    size: int = 16384
    k_siamese: int = 3
    shared_across_layers: bool = True
    gsc_enabled: bool = True
    init_std: float = 0.01
    hash_seed: int = 0xC0DE


@dataclass
class ComboConfig:
    hidden_h: int | None = None
    activation: str = "relu"


@dataclass
class DiagConfig:
    literal_zero: bool = False


@dataclass
class CollapseConfig:
    mode: str = "scores"
    ema_decay: float = 0.99
    scale: bool = True
    include_diag_in_mean: bool = False


@dataclass
class FusionConfig:
    mode: str = "Multiply"
    gate_hidden: int = 8


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 1
    eval_batch_size: int = 1024
    shuffle: bool = True
    verify: bool = False


@dataclass
class GradcheckConfig:
    n_fields: int = 4
    batch_size: int = 3
    bucket_count: int = 6
    codebook_size: int = 16
    dnn_widths: list[int] = field(default_factory=lambda: [12, 6])
    h: float = 1e-5
    tol: float = 1e-3
    seed: int = 0


@dataclass
class OutputConfig:
    dir: str = "runs"


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    codebook: CodebookConfig = field(default_factory=CodebookConfig)
    combo: ComboConfig = field(default_factory=ComboConfig)
    diag: DiagConfig = field(default_factory=DiagConfig)
    collapse: CollapseConfig = field(default_factory=CollapseConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    base_dir: str = field(default=".", metadata={"internal": True})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def validate(self) -> None:
        from .fusion import MODES as FUSION_MODES
        from .model import VARIANTS

        checks = [
            ("model.variant", self.model.variant in VARIANTS, f"must be one of {VARIANTS}"),
            ("model.embed_dim", self.model.embed_dim >= 1, "must be >= 1"),
            ("model.layers", self.model.layers >= 1, "must be >= 1"),
            ("codebook.size", self.codebook.size >= 1, "must be >= 1"),
            ("codebook.k_siamese", self.codebook.k_siamese >= 0, "must be >= 0"),
            ("combo.activation", self.combo.activation in ("relu", "sigmoid", "tanh"),
             "must be relu, sigmoid or tanh"),
            ("collapse.mode", self.collapse.mode in ("scores", "binary"), "must be scores or binary"),
            ("collapse.ema_decay", 0.0 < self.collapse.ema_decay < 1.0, "must lie in (0, 1)"),
            ("fusion.mode", self.fusion.mode in FUSION_MODES, f"must be one of {FUSION_MODES}"),
            ("train.lr", self.train.lr >= 0, "must be >= 0"),
            ("train.batch_size", self.train.batch_size >= 1, "must be >= 1"),
            ("train.epochs", self.train.epochs >= 0, "must be >= 0"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, msg)


def _check_type(value, tp, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        for arg in args:
            try:
                return _check_type(value, arg, key)
            except ConfigError:
                pass
        raise ConfigError(key, f"has invalid type {type(value).__name__}")
    if tp is type(None):
        if value is not None:
            raise ConfigError(key, "must be null")
        return None
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(key, "must be a list")
        return [_check_type(v, args[0], f"{key}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, key)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, "must be true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, "must be an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, "must be a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(key, "must be a string")
        return value
    return value


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix, "must be an object")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if not f.metadata.get("internal")}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in fields:
            raise ConfigError(path, "unknown key")
        kwargs[key] = _check_type(value, hints[key], path)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(prefix, str(exc)) from None


def from_dict(data: dict, base_dir: str = ".") -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data, "")
    cfg.base_dir = str(base_dir)
    cfg.validate()
    return cfg


def load(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("", f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: invalid JSON ({exc})") from None
    return from_dict(data, base_dir=str(path.parent))


def reference() -> str:
    """All keys with default values, as a JSON document."""
    return json.dumps(ExperimentConfig().to_dict(), indent=2, sort_keys=False)
