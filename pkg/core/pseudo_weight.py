"""SDF-aware pseudo-label reliability and the blended student loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Mapping, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.data import AugmentedPair, Sample, augment_pairs, rotate_points
from core.errors import ConfigurationError, PreconditionError, ShapeError
from core.model import SdfModel


class WeightParams(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    alpha: float = Field(default=4.0, ge=0)
    beta: float = Field(default=4.0, ge=0)
    lam: float = Field(default=0.2, ge=0, le=1, alias="lambda")
    w_max: float | None = Field(default=None, ge=0, le=1)  # optional hard cap, off by default
    consistency: Literal["l1", "l2"] = "l1"


@dataclass(frozen=True, eq=False)
class PseudoAssessment:
    cons_loss: float
    variance: float
    weight: float
    pseudo_labels: np.ndarray  # teacher prediction on the weak view, used as the student target
    strong_image: np.ndarray
    weak_image: np.ndarray
    weak_points: np.ndarray  # query points as seen in the weak view


def consistency_loss(f_s, f_w, kind: str = "l1") -> float:
    f_s = np.asarray(f_s, dtype=np.float64).ravel()
    f_w = np.asarray(f_w, dtype=np.float64).ravel()
    if f_s.shape != f_w.shape:
        raise ShapeError(f"prediction lengths differ: {f_s.size} vs {f_w.size}")
    if f_s.size == 0:
        raise PreconditionError("consistency loss needs non-empty predictions")
    diff = f_s - f_w
    if kind == "l1":
        return float(np.mean(np.abs(diff)))
    if kind == "l2":
        return float(np.mean(diff * diff))
    raise ConfigurationError(f"unknown consistency loss {kind!r}")


def sdf_variance(f_w) -> float:
    """Unbiased sample variance of the flattened predictions."""
    v = np.asarray(f_w, dtype=np.float64).ravel()
    if v.size < 2:
        raise PreconditionError(f"variance needs at least 2 values, got {v.size}")
    return float(np.var(v, ddof=1))


def pseudo_weight(cons: float, var: float, params: WeightParams) -> float:
    if cons < 0 or var < 0:
        raise PreconditionError(f"consistency and variance must be non-negative, got {cons}, {var}")
    w = float(np.clip(1.0 - params.alpha * cons - params.beta * var, 0.0, 1.0))
    if params.w_max is not None:
        w = min(w, params.w_max)
    return w


def blended_loss(sup_terms: Mapping[str, float], unsup_terms: Mapping[str, float], w: float, lam: float) -> float:
    """sum_k (1 - lam*w) * L_sup,k + lam*w * L_unsup,k"""
    if set(sup_terms) != set(unsup_terms):
        raise ConfigurationError(f"loss terms differ: {sorted(sup_terms)} vs {sorted(unsup_terms)}")
    if not 0.0 <= w <= 1.0:
        raise PreconditionError(f"pseudo weight must lie in [0, 1], got {w}")
    mix = lam * w
    return float(sum((1.0 - mix) * sup_terms[k] + mix * unsup_terms[k] for k in sorted(sup_terms)))


def assess_batch(teacher: SdfModel, samples: Sequence[Sample], rng: np.random.Generator, params: WeightParams,
                 augment: bool = True) -> list[PseudoAssessment]:
    """Teacher predictions under weak and strong views, scored into one pseudo-label weight per sample.

    Both views of the whole batch go through the teacher in a single pass each.
    """
    for sample in samples:
        if sample.labeled:
            raise PreconditionError(f"sample {sample.index} is labeled; pseudo-labels are for unlabeled samples")
    if not samples:
        return []
    if augment:
        pairs = augment_pairs(samples, rng)
    else:
        pairs = [AugmentedPair(s.image, s.image, s) for s in samples]
    weak_points = [rotate_points(s.points, p.weak_angle) for s, p in zip(samples, pairs)]
    f_weak = teacher.predict_batch(np.stack([p.weak for p in pairs]), weak_points)
    f_strong = teacher.predict_batch(np.stack([p.strong for p in pairs]), [s.points for s in samples])

    out = []
    for pair, points, f_w, f_s in zip(pairs, weak_points, f_weak, f_strong):
        cons = consistency_loss(f_s, f_w, params.consistency)
        var = sdf_variance(f_w)
        out.append(PseudoAssessment(
            cons_loss=cons,
            variance=var,
            weight=pseudo_weight(cons, var, params),
            pseudo_labels=f_w,
            strong_image=pair.strong,
            weak_image=pair.weak,
            weak_points=points,
        ))
    return out


def assess_sample(teacher: SdfModel, sample: Sample, rng: np.random.Generator, params: WeightParams,
                  augment: bool = True) -> PseudoAssessment:
    return assess_batch(teacher, [sample], rng, params, augment)[0]
