"""Adapters that turn an image plus query points into SDF values.

A network input row is the pooled colour cells of the whole image, the
foreground strength sampled on a ring stencil around the query point, and the
point itself mapped to [-1, 1]^2.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage

from core.data import Shape, analytic_sdf, foreground_maps, image_features
from core.errors import ShapeError
from core.nnet import NetworkSpec, ParamVector, forward

STENCIL_RADII = (0.03, 0.08, 0.15)
STENCIL_DIRECTIONS = 8


def _stencil() -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(STENCIL_DIRECTIONS) / STENCIL_DIRECTIONS
    ring = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return np.vstack([np.zeros((1, 2)), *(r * ring for r in STENCIL_RADII)])


STENCIL = _stencil()


class SdfModel(Protocol):
    def predict(self, image: np.ndarray, points: np.ndarray) -> np.ndarray:
        ...

    def predict_batch(self, images: np.ndarray, points: Sequence[np.ndarray]) -> list[np.ndarray]:
        ...


def input_width(feature_cells: int) -> int:
    return 3 * feature_cells * feature_cells + len(STENCIL) + 2


def local_features(foreground: np.ndarray, owner: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear foreground strength at every stencil offset of every point; zero off the image."""
    H, W = foreground.shape[1:]
    q = points[:, None, :] + STENCIL[None]
    rows = q[..., 1] * H - 0.5
    cols = q[..., 0] * W - 0.5
    layer = np.broadcast_to(owner[:, None].astype(np.float64), rows.shape)
    return ndimage.map_coordinates(foreground, [layer, rows, cols], order=1, mode="constant", cval=0.0)


@dataclass(frozen=True, eq=False)
class EncodedImages:
    """Per-image encoder state shared by every query point of that image."""

    pooled: np.ndarray  # (N, 3 * cells^2)
    foreground: np.ndarray  # (N, H, W)

    @classmethod
    def of(cls, images: np.ndarray, cells: int) -> EncodedImages:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        return cls(image_features(images, cells), foreground_maps(images))

    @classmethod
    def concat(cls, parts: Sequence[EncodedImages]) -> EncodedImages:
        return cls(np.concatenate([p.pooled for p in parts]), np.concatenate([p.foreground for p in parts]))

    def __len__(self) -> int:
        return len(self.pooled)

    def rows(self, points: Sequence[np.ndarray]) -> np.ndarray:
        """Stacked input rows, image k paired with points[k]."""
        if len(points) != len(self):
            raise ShapeError(f"{len(points)} point sets for {len(self)} encoded images")
        counts = [len(p) for p in points]
        if sum(counts) == 0:
            return np.zeros((0, self.pooled.shape[1] + len(STENCIL) + 2))
        owner = np.repeat(np.arange(len(self)), counts)
        pts = np.vstack([np.asarray(p, dtype=np.float64) for p in points])
        return np.hstack([self.pooled[owner], local_features(self.foreground, owner, pts), 2.0 * pts - 1.0])


def split_rows(values: np.ndarray, points: Sequence[np.ndarray]) -> list[np.ndarray]:
    return np.split(values, np.cumsum([len(p) for p in points])[:-1])


@dataclass(frozen=True)
class MlpSdf:
    params: ParamVector
    spec: NetworkSpec
    feature_cells: int

    def encode(self, images: np.ndarray) -> EncodedImages:
        return EncodedImages.of(images, self.feature_cells)

    def rows(self, image: np.ndarray, points: np.ndarray) -> np.ndarray:
        return self.encode(image).rows([points])

    def rows_batch(self, images: np.ndarray, points: Sequence[np.ndarray]) -> np.ndarray:
        return self.encode(images).rows(points)

    def predict(self, image: np.ndarray, points: np.ndarray) -> np.ndarray:
        return forward(self.params, self.spec, self.rows(image, points))[:, 0]

    def predict_batch(self, images: np.ndarray, points: Sequence[np.ndarray]) -> list[np.ndarray]:
        return split_rows(forward(self.params, self.spec, self.rows_batch(images, points))[:, 0], points)


@dataclass(frozen=True)
class AnalyticSdf:
    """Oracle: ignores the image and answers with the exact SDF of a known shape."""

    shape: Shape

    def predict(self, image: np.ndarray, points: np.ndarray) -> np.ndarray:
        return analytic_sdf(self.shape, np.atleast_2d(points))

    def predict_batch(self, images: np.ndarray, points: Sequence[np.ndarray]) -> list[np.ndarray]:
        return [self.predict(image, p) for image, p in zip(images, points)]
