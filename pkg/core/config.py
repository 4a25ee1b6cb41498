"""Run configuration: pydantic models, named presets and environment defaults."""
from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any, Literal

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.errors import ConfigurationError
from core.meta_ema import EmaConfig
from core.model import input_width
from core.nnet import Activation, NetworkSpec
from core.pseudo_weight import WeightParams

load_dotenv()

logger = logging.getLogger(__name__)

SDF_OUTPUT_DIR = os.environ.get("SDF_OUTPUT_DIR", "runs")
SDF_DATASET = os.environ.get("SDF_DATASET")


class PhaseConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(ge=0)
    batch_size: int = Field(ge=1)
    lr: float = Field(gt=0)
    decay_epochs: tuple[int, ...] = ()
    eval_every: int = Field(default=1, ge=1)  # surface metrics cadence; the last epoch is always scored

    @model_validator(mode="after")
    def _check_decay(self):
        d = self.decay_epochs
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"decay_epochs must be strictly increasing, got {list(d)}")
        if d and (d[0] < 1 or d[-1] > self.epochs):
            raise ValueError(f"decay_epochs must lie in [1, {self.epochs}], got {list(d)}")
        return self

    def lr_at(self, epoch: int) -> float:
        """lr0 * 0.1 ** (number of milestones <= epoch)"""
        return self.lr * 0.1 ** sum(1 for d in self.decay_epochs if d <= epoch)

    def with_epochs(self, epochs: int) -> "PhaseConfig":
        kept = tuple(d for d in self.decay_epochs if d <= epochs)
        if kept != self.decay_epochs:
            logger.info(f"Dropping decay milestones {[d for d in self.decay_epochs if d > epochs]} beyond {epochs} epochs")
        return self.model_copy(update={"epochs": epochs, "decay_epochs": kept})


class ImportanceConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_batches: int = Field(default=20, ge=1)
    batch_size: int = Field(default=16, ge=1)


class DatasetConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    path: str | None = None
    n: int = Field(default=2000, ge=10)
    labeled_fraction: float = Field(default=0.1, gt=0, le=1)
    height: int = Field(default=32, ge=8)
    width: int = Field(default=32, ge=8)
    grid: int = Field(default=64, ge=8)
    n_queries: int = Field(default=64, ge=2)


class NetworkConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    hidden: tuple[int, ...] = (32, 32)
    activation: Activation = "tanh"
    feature_cells: int = Field(default=4, ge=1)

    def to_spec(self, seed: int) -> NetworkSpec:
        sizes = (input_width(self.feature_cells), *self.hidden, 1)
        acts = (self.activation,) * len(self.hidden) + ("identity",)
        return NetworkSpec(layer_sizes=sizes, activations=acts, seed=seed)


class SemiOptions(BaseModel):
    """Switches of the semi-supervised loop; the ablation rows are combinations of these."""

    model_config = ConfigDict(frozen=True)

    ema_enabled: bool = True
    ema_per_step: bool = False
    weighting: Literal["adaptive", "fixed", "none"] = "adaptive"
    fixed_weight: float = Field(default=0.5, ge=0, le=1)
    student_view: Literal["strong", "weak"] = "strong"
    grad_penalty: float = Field(default=0.0, ge=0)
    grad_penalty_step: float = Field(default=1e-2, gt=0)
    val_fraction: float = Field(default=0.1, gt=0, lt=1)


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    dataset: DatasetConfig = DatasetConfig()
    network: NetworkConfig = NetworkConfig()
    warmup: PhaseConfig
    semi: PhaseConfig
    weight_params: WeightParams = WeightParams()
    ema_config: EmaConfig = EmaConfig()
    importance: ImportanceConfig = ImportanceConfig()
    options: SemiOptions = SemiOptions()
    ablation_epochs: int = Field(default=25, ge=0)
    seed: int = Field(default=0, ge=0)
    output_dir: str = SDF_OUTPUT_DIR

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    @property
    def dataset_path(self) -> Path:
        if self.dataset.path:
            return Path(self.dataset.path)
        if SDF_DATASET:
            return Path(SDF_DATASET)
        return self.out / "dataset.npz"

    def spec(self) -> NetworkSpec:
        return self.network.to_spec(self.seed)

    def with_updates(self, **updates: Any) -> "RunConfig":
        return build_config(merge(self.model_dump(by_alias=True), updates))

    def with_phase_epochs(self, phase: str, epochs: int) -> "RunConfig":
        if phase == "ablation":
            return self.model_copy(update={"ablation_epochs": epochs})
        if phase not in ("warmup", "semi"):
            raise ConfigurationError(f"unknown phase {phase!r}")
        if epochs < 0:
            raise ConfigurationError(f"epochs must be non-negative, got {epochs}")
        return self.model_copy(update={phase: getattr(self, phase).with_epochs(epochs)})


PRESETS: dict[str, dict[str, Any]] = {
    "toy": {
        "warmup": {"epochs": 200, "batch_size": 16, "lr": 0.1, "decay_epochs": [175, 195], "eval_every": 10},
        "semi": {"epochs": 100, "batch_size": 64, "lr": 0.05, "decay_epochs": [85, 95], "eval_every": 5},
        "importance": {"n_batches": 20, "batch_size": 16},
        "ablation_epochs": 25,
    },
    "paper-scale": {
        "warmup": {"epochs": 400, "batch_size": 32, "lr": 0.1, "decay_epochs": [350, 390], "eval_every": 10},
        "semi": {"epochs": 200, "batch_size": 160, "lr": 0.05, "decay_epochs": [170, 190]},
        "importance": {"n_batches": 100, "batch_size": 32},
        "ablation_epochs": 50,
    },
}


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; override wins."""
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def build_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid run configuration: {e}") from None


def load_run_config(path: str | Path | None = None, preset: str = "toy",
                    overrides: dict[str, Any] | None = None) -> RunConfig:
    """Preset, then the JSON file, then explicit overrides."""
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    data = merge({}, PRESETS[preset])
    if path is not None:
        path = Path(path)
        try:
            data = merge(data, json.loads(path.read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from None
    return build_config(merge(data, overrides or {}))
