"""Strict JSON experiment configuration."""

from __future__ import annotations

import json
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..nn import ModelSpec, SpecError, infer_shapes


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Strict):
    layers: list[dict]
    splits: list[int] = Field(default_factory=list)

    def spec(self) -> ModelSpec:
        return ModelSpec(layers=[dict(d) for d in self.layers], splits=list(self.splits))


class MimoConfig(_Strict):
    n_t: int = Field(64, ge=1)
    n_r: int = Field(64, ge=1)
    r: int = Field(8, ge=1)
    n_paths: int = Field(8, ge=1)

    @field_validator("r")
    @classmethod
    def _fits(cls, r, info):
        n_t, n_r = info.data.get("n_t"), info.data.get("n_r")
        if n_t is not None and n_r is not None and r > min(n_t, n_r):
            raise ValueError(f"r={r} exceeds min(n_t, n_r)={min(n_t, n_r)}")
        return r


class ActivationConfig(_Strict):
    kind: Literal["crelu", "qam"] = "crelu"
    levels: int = Field(4, ge=2)
    delta: float = Field(1.0, gt=0)


class LossWeights(_Strict):
    lambda_f: float = Field(1.0, ge=0)
    lambda_b: float = Field(1.0, ge=0)


class OptimizerConfig(_Strict):
    lr: float = Field(0.005, gt=0)
    batch_size: int = Field(64, ge=2)
    epochs: int = Field(50, ge=1)


class MobilityConfigModel(_Strict):
    rho: float = Field(0.0, ge=0, le=1)
    update_interval: int = Field(50, ge=1)


class BlobData(_Strict):
    class_count: int = Field(4, ge=2)
    feature_dim: int = Field(16, ge=1)
    separation: float = Field(4.0, gt=0)
    variance: float = Field(1.0, gt=0)
    samples_per_class: int = Field(1000, ge=1)
    seed: int | None = None  # None: follow the experiment seed


class DataConfig(_Strict):
    blobs: BlobData | None = None
    cifar10: str | None = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.blobs is None) == (self.cifar10 is None):
            raise ValueError("give exactly one of 'blobs' or 'cifar10'")
        return self

    def input_shape(self) -> tuple[int, ...]:
        if self.blobs is not None:
            return (self.blobs.feature_dim,)
        return (3, 32, 32)

    def class_count(self) -> int:
        return self.blobs.class_count if self.blobs is not None else 10


class ExperimentConfig(_Strict):
    model: ModelConfig
    data: DataConfig
    mimo: MimoConfig = Field(default_factory=MimoConfig)
    snr_db: float | None = 20.0  # None: noiseless links
    activation: ActivationConfig = Field(default_factory=ActivationConfig)
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    mobility: MobilityConfigModel = Field(default_factory=MobilityConfigModel)
    seed: int = 0

    @model_validator(mode="after")
    def _chain(self):
        try:
            infer_shapes(self.model.spec(), self.data.input_shape(), self.data.class_count())
        except SpecError as e:
            raise ValueError(str(e)) from None
        return self

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)


def _format(err: ValidationError) -> str:
    e = err.errors()[0]
    loc = ""
    for part in e["loc"]:
        loc += f"[{part}]" if isinstance(part, int) else (f".{part}" if loc else str(part))
    msg = e["msg"].removeprefix("Value error, ")
    # shape errors from the model validator already carry their own path
    if msg.startswith("model."):
        return msg
    return f"{loc or '<root>'}: {msg}"


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"<root>: invalid JSON ({e})") from None
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_format(e)) from None


def with_updates(cfg: ExperimentConfig, changes: dict) -> ExperimentConfig:
    """Copy of ``cfg`` with dotted-path overrides, e.g. ``{"mobility.rho": 0.1}``."""
    raw = cfg.model_dump(mode="json")
    for path, value in changes.items():
        node = raw
        keys = path.split(".")
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = value
    return config_from_dict(raw)
