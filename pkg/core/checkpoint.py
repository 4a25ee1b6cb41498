"""JSON checkpoints: network spec plus exact parameter values."""
from __future__ import annotations

import logging
from pathlib import Path

from pydantic import BaseModel, ValidationError

from core.errors import ConfigurationError
from core.nnet import NetworkSpec, ParamVector, param_names

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sdf-mlp/1"


class CheckpointMeta(BaseModel):
    phase: str
    epoch: int
    seed: int
    feature_cells: int


class Checkpoint(BaseModel):
    format: str = CHECKPOINT_FORMAT
    spec: NetworkSpec
    values: list[float]
    meta: CheckpointMeta

    def params(self) -> ParamVector:
        if len(self.values) != self.spec.total_len:
            raise ConfigurationError(f"checkpoint has {len(self.values)} values, spec expects {self.spec.total_len}")
        return ParamVector(param_names(self.spec), self.values)


def make_checkpoint(params: ParamVector, spec: NetworkSpec, *, phase: str, epoch: int, seed: int,
                    feature_cells: int) -> Checkpoint:
    return Checkpoint(
        spec=spec,
        values=[float(v) for v in params.values],
        meta=CheckpointMeta(phase=phase, epoch=epoch, seed=seed, feature_cells=feature_cells),
    )


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    # pydantic writes floats with repr precision, so values round-trip exactly
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(ckpt.model_dump_json(indent=1), encoding="utf-8")
    logger.info(f"Saved {ckpt.meta.phase} checkpoint (epoch {ckpt.meta.epoch}) to {path}")
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"checkpoint {path} does not exist")
    try:
        ckpt = Checkpoint.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise ConfigurationError(f"checkpoint {path} is malformed: {e}") from None
    if ckpt.format != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"unsupported checkpoint format {ckpt.format!r}")
    return ckpt
