"""Gradient-based per-parameter importance of the teacher on unlabeled data."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from core.data import Sample, rotate_points, weak_augment_batch
from core.errors import NumericError, PreconditionError, ShapeError
from core.model import MlpSdf
from core.nnet import NetworkSpec, ParamVector, SquaredNorm, forward_backward

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ImportanceMap:
    omega: np.ndarray
    n_batches: int
    normalized: bool = False
    names: tuple[str, ...] = ()

    def __post_init__(self):
        omega = np.array(self.omega, dtype=np.float64)
        if omega.ndim != 1 or not np.all(np.isfinite(omega)) or np.any(omega < 0):
            raise NumericError("importance weights must be a finite, non-negative vector")
        if self.names and len(self.names) != len(omega):
            raise ShapeError(f"{len(self.names)} names for {len(omega)} importance weights")
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)


def importance_loss(sdf_out) -> float:
    """Sum of squared SDF outputs."""
    v = np.asarray(sdf_out, dtype=np.float64).ravel()
    if v.size == 0:
        raise PreconditionError("importance loss needs at least one output")
    return float(np.dot(v, v))


def accumulate_importance(params: ParamVector, spec: NetworkSpec, batches: Iterable[np.ndarray]) -> ImportanceMap:
    """Mean over batches of |d(sum sdf^2)/d theta|, accumulated in batch order."""
    total = np.zeros(params.total_len)
    n = 0
    for n, rows in enumerate(batches, start=1):
        try:
            _, grad = forward_backward(params, spec, rows, SquaredNorm())
        except NumericError as e:
            raise NumericError(f"importance batch {n - 1}: {e.message}", batch_index=n - 1) from e
        total += np.abs(grad.values)
    if n == 0:
        raise PreconditionError("importance estimation needs at least one batch")
    return ImportanceMap(omega=total / n, n_batches=n, names=params.names)


def estimate_importance(teacher: MlpSdf, unlabeled: Sequence[Sample], n_batches: int, batch_size: int,
                        rng: np.random.Generator) -> ImportanceMap:
    """Draw n_batches weakly augmented batches (with replacement) and accumulate |grad|."""
    if not unlabeled:
        raise PreconditionError("importance estimation needs unlabeled samples")
    if n_batches < 1 or batch_size < 1:
        raise PreconditionError(f"n_batches and batch_size must be >= 1, got {n_batches}, {batch_size}")

    def batches():
        for _ in range(n_batches):
            picked = [unlabeled[int(idx)] for idx in rng.integers(0, len(unlabeled), size=batch_size)]
            images, angles = weak_augment_batch(np.stack([s.image for s in picked]), rng)
            points = [rotate_points(s.points, float(a)) for s, a in zip(picked, angles)]
            yield teacher.rows_batch(images, points)

    omega = accumulate_importance(teacher.params, teacher.spec, batches())
    logger.debug(f"Importance over {n_batches} batches: mean {omega.omega.mean():.4g}, max {omega.omega.max():.4g}")
    return omega


def normalize_importance(imp: ImportanceMap) -> ImportanceMap:
    """Scale to mean 1; an all-zero map stays zero."""
    mean = imp.omega.mean() if imp.omega.size else 0.0
    omega = imp.omega / mean if mean > 0 else imp.omega
    return ImportanceMap(omega=omega, n_batches=imp.n_batches, normalized=True, names=imp.names)


def dump_importance(path: str | Path, imp: ImportanceMap) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = imp.names or tuple(str(i) for i in range(len(imp.omega)))
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["name", "omega"])
        for name, w in zip(names, imp.omega):
            writer.writerow([name, repr(float(w))])
    return path
