"""Pydantic schemas for experiment, dataset, model and training configuration."""

import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator, model_validator

from core.errors import ConfigError


class _Schema(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SplitSpec(_Schema):
    """Train/validation/test ratios and the shuffling seed."""

    train: float = Field(0.70, ge=0.0, description="Training fraction")
    val: float = Field(0.10, ge=0.0, description="Validation fraction")
    test: float = Field(0.20, ge=0.0, description="Test fraction")
    seed: int = Field(0, description="Shuffle seed")

    @model_validator(mode="after")
    def _ratios_sum_to_one(self):
        total = self.train + self.val + self.test
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {total}")
        return self

    @property
    def ratios(self) -> Tuple[float, float, float]:
        return self.train, self.val, self.test


class SyntheticSpec(_Schema):
    """Deterministic synthetic leaf-image dataset."""

    species: int = Field(4, ge=1)
    diseases: int = Field(3, ge=1, description="Disease count including 'healthy'")
    compatibility: Literal["full", "sparse"] = "full"
    images_per_pair: int = Field(30, ge=1)
    extent: int = Field(32, ge=8)
    seed: int = 0
    sparse_keep: float = Field(0.6, gt=0.0, le=1.0, description="Pair keep rate for sparse masks")


class BackboneConfig(_Schema):
    """Custom 4-layer CNN: (conv, bn, relu, conv, bn, relu, pool) x 2, then flatten."""

    extent: int = Field(32, ge=1, description="Input image extent E (images are E x E x 3)")
    channels: List[int] = Field(default_factory=lambda: [32, 32, 32, 32])
    kernel: int = Field(3, ge=1)
    pool: Optional[int] = Field(None, validate_default=True, description="Pool extent; 2 for E < 256, 8 otherwise")

    @field_validator("channels")
    @classmethod
    def _four_layers(cls, value: List[int]) -> List[int]:
        if len(value) != 4 or any(c < 1 for c in value):
            raise ValueError("channels must list 4 positive conv widths")
        return value

    @field_validator("pool")
    @classmethod
    def _default_pool(cls, value: Optional[int], info: ValidationInfo) -> int:
        if value is None:
            value = 8 if info.data.get("extent", 32) >= 256 else 2
        if value < 1:
            raise ValueError("pool must be >= 1")
        return value

    @property
    def feature_extent(self) -> int:
        """Spatial extent after both pools (ragged borders are padded, so ceil)."""
        after_first = -(-self.extent // self.pool)
        return -(-after_first // self.pool)

    @property
    def flatten_dim(self) -> int:
        """Feature width F; 0 when the pool is too large for the extent."""
        if self.extent // (self.pool * self.pool) == 0:
            return 0
        return self.feature_extent ** 2 * self.channels[-1]


class ModelConfig(_Schema):
    """Backbone plus branch width shared by every head kind."""

    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    branch_width: int = Field(128, ge=1, description="Hidden width h of each stage-1 branch")


class BalanceWeights(_Schema):
    """Weights of the four cross-entropy terms, addressed by name."""

    beta1: float = Field(0.1, ge=0.0, description="Stage-1 plant")
    beta2: float = Field(0.4, ge=0.0, description="Stage-2 plant")
    delta1: float = Field(0.1, ge=0.0, description="Stage-1 disease")
    delta2: float = Field(0.5, ge=0.0, description="Stage-2 disease")

    @model_validator(mode="after")
    def _not_all_zero(self):
        if max(self.beta1, self.beta2, self.delta1, self.delta2) <= 0:
            raise ValueError("at least one balance weight must be positive")
        return self

    def as_tuple(self) -> Tuple[float, float, float, float]:
        """(beta1, beta2, delta1, delta2); the order used for CSV columns and grid ordering."""
        return self.beta1, self.beta2, self.delta1, self.delta2

    @classmethod
    def parse_flag(cls, text: str) -> "BalanceWeights":
        """Parse the CLI form 'b1,b2,d1,d2'."""
        try:
            b1, b2, d1, d2 = (float(v) for v in text.split(","))
        except ValueError as exc:
            raise ConfigError(f"--weights expects four comma-separated numbers, got {text!r}") from exc
        try:
            return cls(beta1=b1, beta2=b2, delta1=d1, delta2=d2)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc


UNIT_WEIGHTS = BalanceWeights(beta1=1.0, beta2=1.0, delta1=1.0, delta2=1.0)


class TrainConfig(_Schema):
    """Optimizer, batching, early stopping and repetition settings."""

    learning_rate: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(32, ge=1)
    max_epochs: int = Field(300, ge=0)
    patience: int = Field(50, ge=1)
    seed: int = 0
    repeats: int = Field(10, ge=1)
    optimizer: Literal["adam", "sgd"] = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    min_improvement: float = Field(1e-6, ge=0.0, description="Early-stopping improvement margin")


class TransferConfig(_Schema):
    """Initialise from a saved checkpoint and fine-tune."""

    checkpoint: Optional[str] = None
    groups: List[str] = Field(default_factory=lambda: ["backbone"])
    freeze: List[str] = Field(default_factory=list)


class DatasetConfig(_Schema):
    """A dataset on disk, optionally generated from a synthetic spec first."""

    root: str
    layout: Literal["pairdir", "csv"] = "pairdir"
    synthetic: Optional[SyntheticSpec] = None


APPROACHES = ("multi_model", "powerset", "multi_output", "gsmo", "gsmo_weighted")


class ExperimentConfig(_Schema):
    """One experiment record; flags override individual fields."""

    dataset: DatasetConfig
    split: SplitSpec = Field(default_factory=SplitSpec)
    model: ModelConfig = Field(default_factory=ModelConfig)
    approach: Literal["multi_model", "powerset", "multi_output", "gsmo", "gsmo_weighted", "gsmo_transfer"] = "gsmo_weighted"
    weights: BalanceWeights = Field(default_factory=BalanceWeights)
    train: TrainConfig = Field(default_factory=TrainConfig)
    transfer: TransferConfig = Field(default_factory=TransferConfig)
    output_dir: str = "runs/experiment"

    @model_validator(mode="after")
    def _extent_matches_synthetic(self):
        spec = self.dataset.synthetic
        if spec is not None and spec.extent != self.model.backbone.extent:
            raise ValueError(
                f"synthetic extent {spec.extent} differs from backbone extent {self.model.backbone.extent}"
            )
        return self

    def dump(self) -> str:
        """Normalized JSON text."""
        return self.model_dump_json(indent=2)


def parse_config(text: str, schema=ExperimentConfig):
    """Parse JSON text into a schema, raising ConfigError on any problem."""
    try:
        return schema.model_validate(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Invalid JSON: {exc}") from exc
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Path, schema=ExperimentConfig):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}") from exc
    return parse_config(text, schema)


def override(config: BaseModel, **fields) -> BaseModel:
    """Copy of a frozen config with fields replaced and re-validated."""
    data = config.model_dump()
    data.update({k: v.model_dump() if isinstance(v, BaseModel) else v for k, v in fields.items() if v is not None})
    try:
        return type(config).model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
