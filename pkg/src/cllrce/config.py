"""Experiment configuration: one YAML file with corpus/model/train/scoring sections.

Example::

    corpus:
      n_speakers: 50
      seed: 0
    model:
      pooling: stats
    train:
      loss_kind: cllr_ce
      epochs: 100
    scoring:
      backend: cosine
    output_dir: runs/default

Omitted fields take their defaults; unknown keys are an error.
"""

from dataclasses import dataclass, field, fields

import yaml

from .errors import ContractError, require
from .model import ModelConfig
from .synthdata import CorpusSpec
from .trainer import TrainConfig

BACKENDS = ("cosine", "twocov")


@dataclass(frozen=True)
class ModelSettings:
    """Model fields that do not derive from the corpus."""

    frame_layer_dims: tuple = (64, 64)
    embedding_dim: int = 32
    pooling: str = "stats"
    attention_dim: int = None
    condition_dim: int = None

    def build(self, spec: CorpusSpec, **overrides) -> ModelConfig:
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(overrides)
        if kw["pooling"] != "attn":
            kw["attention_dim"] = kw["condition_dim"] = None
        return ModelConfig(feature_dim=spec.feature_dim, n_speakers=spec.n_speakers, **kw)


@dataclass(frozen=True)
class ScoringSettings:
    backend: str = "cosine"
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        require(self.backend in BACKENDS, f"backend must be one of {BACKENDS}, got {self.backend!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    scoring: ScoringSettings = field(default_factory=ScoringSettings)
    output_dir: str = "runs/default"


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ContractError(f"config section {where!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ContractError(f"unknown key(s) in {where!r}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ContractError(f"bad value in {where!r}: {exc}") from None


def config_from_dict(data) -> ExperimentConfig:
    data = dict(data or {})
    unknown = sorted(set(data) - {"corpus", "model", "train", "scoring", "output_dir"})
    if unknown:
        raise ContractError(f"unknown top-level key(s): {', '.join(unknown)}")
    cfg = ExperimentConfig(
        corpus=_build(CorpusSpec, data.get("corpus"), "corpus"),
        model=_build(ModelSettings, data.get("model"), "model"),
        train=_build(TrainConfig, data.get("train"), "train"),
        scoring=_build(ScoringSettings, data.get("scoring"), "scoring"),
        output_dir=str(data.get("output_dir", "runs/default")),
    )
    # validate the derived model config before any stage runs
    cfg.model.build(cfg.corpus)
    return cfg


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path, encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ContractError(f"{path}: invalid YAML: {str(exc).splitlines()[0]}") from None
    return config_from_dict(data)
