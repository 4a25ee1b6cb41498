"""Reconstruction metrics on SDF grids: Chamfer, IoU, F-score, normal consistency."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field
from scipy import ndimage
from scipy.spatial import cKDTree

from core.data import Shape, grid_points, surface_samples
from core.errors import EmptySurfaceError, NumericError, PreconditionError, ShapeError
from core.model import SdfModel

logger = logging.getLogger(__name__)

GT_SURFACE_POINTS = 1024
FSCORE_FRACTION = 0.01  # of the ground-truth bounding-box diagonal
WORST_CHAMFER_X100 = math.sqrt(2.0) * 100.0  # unit-square diagonal


@dataclass(frozen=True, eq=False)
class SdfGrid:
    """SDF values on the G x G cell centres of the unit square; values[i, j] sits at ((j+.5)/G, (i+.5)/G)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ShapeError(f"SDF grid must be square, got shape {values.shape}")
        if values.shape[0] < 8:
            raise ShapeError(f"SDF grid resolution must be at least 8, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise NumericError("SDF grid contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def occupancy(self) -> np.ndarray:
        return self.values < 0.0

    @classmethod
    def from_model(cls, model: SdfModel, image: np.ndarray, resolution: int) -> "SdfGrid":
        return cls(np.asarray(model.predict(image, grid_points(resolution))).reshape(resolution, resolution))


@dataclass(frozen=True, eq=False)
class SurfaceSamples:
    points: np.ndarray  # (N, 2)
    normals: np.ndarray  # (N, 2), unit length

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 2)
        if len(points) != len(normals):
            raise ShapeError(f"{len(points)} points but {len(normals)} normals")
        if len(normals) and np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0)) > 1e-9:
            raise NumericError("surface normals must have unit length")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "normals", normals)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def of_shape(cls, shape: Shape, n: int = GT_SURFACE_POINTS) -> "SurfaceSamples":
        points, normals = surface_samples(shape, n)
        return cls(points, normals)


class MetricsReport(BaseModel):
    chamfer_x100: float = Field(ge=0)
    iou_pct: float = Field(ge=0, le=100)
    fscore_pct: float = Field(ge=0, le=100)
    normal_consistency: float = Field(ge=-1, le=1)
    empty_surface: bool = False

    @classmethod
    def worst(cls) -> "MetricsReport":
        return cls(chamfer_x100=WORST_CHAMFER_X100, iou_pct=0.0, fscore_pct=0.0, normal_consistency=0.0,
                   empty_surface=True)

    @classmethod
    def mean(cls, reports: list["MetricsReport"]) -> "MetricsReport":
        if not reports:
            raise PreconditionError("cannot average an empty list of reports")
        return cls(
            chamfer_x100=float(np.mean([r.chamfer_x100 for r in reports])),
            iou_pct=float(np.mean([r.iou_pct for r in reports])),
            fscore_pct=float(np.mean([r.fscore_pct for r in reports])),
            normal_consistency=float(np.mean([r.normal_consistency for r in reports])),
            empty_surface=any(r.empty_surface for r in reports),
        )


def _crossings(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mask of lattice edges whose endpoints straddle zero."""
    return ((a < 0.0) & (b >= 0.0)) | ((a >= 0.0) & (b < 0.0))


def extract_isocontour(grid: SdfGrid) -> SurfaceSamples:
    """Marching-squares zero crossings on the lattice edges, linearly interpolated.

    Every edge of the cell-centre lattice that changes sign contributes one point;
    this is the vertex set of the marching-squares polyline. Normals are the
    central-difference gradient, bilinearly interpolated and normalized.
    """
    v = grid.values
    G = grid.resolution
    if not (np.any(v < 0.0) and np.any(v >= 0.0)):
        raise EmptySurfaceError(f"SDF grid of resolution {G} has no zero crossing")

    # (row, col) in fractional lattice units
    coords = []
    a, b = v[:, :-1], v[:, 1:]
    rows, cols = np.nonzero(_crossings(a, b))
    t = a[rows, cols] / (a[rows, cols] - b[rows, cols])
    coords.append(np.stack([rows.astype(np.float64), cols + t], axis=1))
    a, b = v[:-1, :], v[1:, :]
    rows, cols = np.nonzero(_crossings(a, b))
    t = a[rows, cols] / (a[rows, cols] - b[rows, cols])
    coords.append(np.stack([rows + t, cols.astype(np.float64)], axis=1))
    rc = np.concatenate(coords)

    d_row, d_col = np.gradient(v)
    gx = ndimage.map_coordinates(d_col, rc.T, order=1, mode="nearest")
    gy = ndimage.map_coordinates(d_row, rc.T, order=1, mode="nearest")
    normals = np.stack([gx, gy], axis=1)
    norm = np.linalg.norm(normals, axis=1)
    flat = norm < 1e-12
    if np.any(flat):
        logger.debug(f"{int(flat.sum())} isocontour points have a vanishing gradient")
        normals[flat] = [1.0, 0.0]
        norm[flat] = 1.0
    normals /= norm[:, None]

    points = np.stack([(rc[:, 1] + 0.5) / G, (rc[:, 0] + 0.5) / G], axis=1)
    return SurfaceSamples(points, normals)


def _require(*sets: SurfaceSamples) -> None:
    for s in sets:
        if len(s) == 0:
            raise PreconditionError("surface metrics need non-empty point sets")


def _nn(source: SurfaceSamples, target: SurfaceSamples) -> tuple[np.ndarray, np.ndarray]:
    dist, idx = cKDTree(target.points).query(source.points, k=1)
    return dist, idx


def chamfer_l1(A: SurfaceSamples, B: SurfaceSamples) -> float:
    """0.5 * (mean_A min-dist to B + mean_B min-dist to A), unscaled."""
    _require(A, B)
    d_ab, _ = _nn(A, B)
    d_ba, _ = _nn(B, A)
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))


def iou(pred: SdfGrid, gt_occupancy: np.ndarray) -> float:
    gt = np.asarray(gt_occupancy, dtype=bool)
    if gt.shape != pred.values.shape:
        raise ShapeError(f"prediction grid {pred.values.shape} and occupancy {gt.shape} differ")
    inside = pred.occupancy
    union = np.count_nonzero(inside | gt)
    if union == 0:
        return 100.0
    return 100.0 * np.count_nonzero(inside & gt) / union


def fscore(A: SurfaceSamples, B: SurfaceSamples, threshold: float) -> float:
    """Harmonic mean of precision (A near B) and recall (B near A), in percent."""
    _require(A, B)
    if threshold <= 0:
        raise PreconditionError(f"F-score threshold must be positive, got {threshold}")
    d_ab, _ = _nn(A, B)
    d_ba, _ = _nn(B, A)
    precision = float(np.mean(d_ab < threshold))
    recall = float(np.mean(d_ba < threshold))
    if precision + recall == 0.0:
        return 0.0
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def fscore_threshold(shape: Shape) -> float:
    x0, y0, x1, y1 = shape.bounds()
    return FSCORE_FRACTION * math.hypot(x1 - x0, y1 - y0)


def normal_consistency(A: SurfaceSamples, B: SurfaceSamples) -> float:
    _require(A, B)
    _, i_ab = _nn(A, B)
    _, i_ba = _nn(B, A)
    ab = np.abs(np.sum(A.normals * B.normals[i_ab], axis=1))
    ba = np.abs(np.sum(B.normals * A.normals[i_ba], axis=1))
    return min(1.0, 0.5 * (float(np.mean(ab)) + float(np.mean(ba))))


def score_grid(pred: SdfGrid, shape: Shape, gt_occupancy: np.ndarray) -> MetricsReport:
    """All four metrics of one prediction; an empty predicted surface scores the worst case."""
    try:
        surface = extract_isocontour(pred)
    except EmptySurfaceError:
        return MetricsReport.worst()
    gt = SurfaceSamples.of_shape(shape)
    return MetricsReport(
        chamfer_x100=100.0 * chamfer_l1(surface, gt),
        iou_pct=iou(pred, gt_occupancy),
        fscore_pct=fscore(surface, gt, fscore_threshold(shape)),
        normal_consistency=normal_consistency(surface, gt),
    )
