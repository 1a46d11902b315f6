"""Experiment configuration: a YAML document validated by pydantic models."""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..errors import ConfigError

STANDARD_MINORITY = (20, 50, 100)
STANDARD_MAJORITY = 1000


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetSpec(_Strict):
    generator: Literal["blobs", "tokens", "csv", "idx"] = "blobs"
    protocol: Literal["imbalanced", "low_data"] = "imbalanced"
    # imbalanced protocol
    minority_count: int = Field(20, ge=1)
    majority_count: int = Field(STANDARD_MAJORITY, ge=1)
    minority_class: Literal[0, 1] = 0
    # low-data protocol
    n_train_per_class: int = Field(40, ge=1)
    # both
    n_val_per_class: int | None = Field(None, ge=0)
    n_test_per_class: int = Field(1000, ge=0)
    # blobs
    dim: int = Field(2, ge=1)
    n_classes: int = Field(2, ge=2)
    separation: float = Field(4.0, ge=0)
    stddev: float = Field(1.0, ge=0)
    # tokens
    vocab_size: int = Field(32, ge=4)
    seq_len: int = Field(8, ge=1)
    # files
    path: str | None = None
    labels_path: str | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.generator in ("csv", "idx") and not self.path:
            raise ValueError(f"generator {self.generator!r} needs a path")
        if self.protocol == "imbalanced" and self.generator in ("blobs", "tokens") and self.n_classes != 2:
            raise ValueError("the imbalanced protocol is binary; set n_classes: 2")
        return self

    @property
    def val_per_class(self) -> int:
        if self.n_val_per_class is not None:
            return self.n_val_per_class
        return 10 if self.protocol == "imbalanced" else 2

    @property
    def setting(self) -> str:
        """Column label for reports, e.g. ``20:1000`` or ``40+2``."""
        if self.protocol == "imbalanced":
            return f"{self.minority_count}:{self.majority_count}"
        return f"{self.n_train_per_class}+{self.val_per_class}"

    @property
    def protocol_label(self) -> str:
        if self.protocol == "imbalanced":
            standard = self.minority_count in STANDARD_MINORITY and self.majority_count == STANDARD_MAJORITY
            return self.setting if standard else "custom"
        return self.setting


class ModelSpec(_Strict):
    arch: Literal["logistic", "mlp"] = "logistic"
    hidden: int = Field(16, ge=1)


class TrainerSpec(_Strict):
    """Optional overrides of the trainer defaults; ``None`` keeps the default."""

    lr_theta: float | None = Field(None, gt=0)
    lr_phi: float | None = Field(None, ge=0)
    lr_look: float | None = Field(None, gt=0)
    batch_size: int | None = Field(None, ge=1)
    epochs: int | None = Field(None, ge=1)
    phi_steps: int | None = Field(None, ge=1)
    meta_mode: Literal["analytic", "hvp_fd"] | None = None
    order: Literal["phi_first", "theta_first"] | None = None
    momentum: float | None = Field(None, ge=0, lt=1)
    decay: float | None = Field(None, ge=0, le=1)
    hvp_delta: float | None = Field(None, gt=0)
    select_best: bool | None = None

    def merged_with(self, other: "TrainerSpec | None") -> "TrainerSpec":
        if other is None:
            return self
        data = self.model_dump()
        data.update({k: v for k, v in other.model_dump().items() if v is not None})
        return TrainerSpec(**data)

    def overrides(self) -> dict:
        return {k: v for k, v in self.model_dump().items() if v is not None}


class AugmentSpec(_Strict):
    n_substitutions: int = Field(1, ge=1)
    n_samples: int = Field(2, ge=1)
    tau: float = Field(1.0, gt=0)
    anneal: float = Field(0.7, gt=0, le=1)
    tau_floor: float = Field(0.1, gt=0)
    prefit: bool = True
    bound: float = Field(1.0, gt=0)
    sigma: float = Field(0.1, ge=0)


class MethodSpec(_Strict):
    name: str
    reward: Literal["delta", "weight", "proportion", "ren", "augment"] = "delta"
    frozen: bool = False
    weight_mode: Literal["softmax", "linear"] = "softmax"
    merged_from: str | None = None
    trainer: TrainerSpec | None = None
    augment: AugmentSpec | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.merged_from is not None and self.reward != "delta":
            raise ValueError("merged_from applies to the delta reward only")
        return self


class RunConfig(_Strict):
    name: str = "run"
    dataset: DatasetSpec = DatasetSpec()
    model: ModelSpec = ModelSpec()
    trainer: TrainerSpec = TrainerSpec()
    augment: AugmentSpec = AugmentSpec()
    methods: list[MethodSpec] = Field(default_factory=lambda: [MethodSpec(name="mle")], min_length=1)
    seeds: list[int] = Field(default_factory=lambda: list(range(1, 16)), min_length=1)
    output_dir: str = "runs/run"

    @field_validator("seeds", mode="before")
    @classmethod
    def _expand_seed_count(cls, v):
        if isinstance(v, int):
            if v < 1:
                raise ValueError("seed count must be >= 1")
            return list(range(1, v + 1))
        return v

    @model_validator(mode="after")
    def _check(self):
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ValueError(f"method names must be unique, got {names}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be unique")
        for k, m in enumerate(self.methods):
            if m.merged_from is not None and m.merged_from not in names[:k]:
                raise ValueError(f"method {m.name!r}: merged_from {m.merged_from!r} must name an earlier method")
        return self

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{where}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: dict, source: str = "<config>") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_format_errors(exc)}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return parse_config(data if data is not None else {}, str(path))
