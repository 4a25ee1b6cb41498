"""Procedural single-view -> SDF dataset plus weak/strong augmentations.

Coordinates live in the unit square. Pixel ``[i, j]`` of an ``H x W`` image and
cell ``[i, j]`` of a ``G x G`` grid sit at their centres, ``x = (j + .5) / W``,
``y = (i + .5) / H``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from matplotlib.colors import hsv_to_rgb
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import ndimage

from core.errors import ConfigurationError, GroundTruthAccessError, ShapeError

logger = logging.getLogger(__name__)

ShapeKind = Literal["circle", "rectangle", "capsule"]
SHAPE_KINDS: tuple[str, ...] = ("circle", "rectangle", "capsule")
MARGIN = 0.05
BACKGROUND = 0.5
DATASET_FORMAT_VERSION = 1
_SIZE_COUNT = {"circle": 1, "rectangle": 2, "capsule": 2}


class Shape(BaseModel):
    """One 2D primitive.

    size: circle ``(radius,)``, rectangle ``(half_w, half_h)``,
    capsule ``(half_length, radius)`` with its axis at ``angle`` radians.
    """

    model_config = ConfigDict(frozen=True)

    kind: ShapeKind
    center: tuple[float, float]
    size: tuple[float, ...]
    angle: float = 0.0
    color: tuple[float, float, float]

    @model_validator(mode="after")
    def _check(self):
        if len(self.size) != _SIZE_COUNT[self.kind] or any(s <= 0 for s in self.size):
            raise ValueError(f"{self.kind} needs {_SIZE_COUNT[self.kind]} positive size values, got {self.size}")
        if any(not 0.0 <= c <= 1.0 for c in self.color):
            raise ValueError(f"color must lie in [0,1]^3, got {self.color}")
        x0, y0, x1, y1 = self.bounds()
        tol = 1e-9
        if min(x0, y0) < MARGIN - tol or max(x1, y1) > 1.0 - MARGIN + tol:
            raise ValueError(f"{self.kind} at {self.center} leaves the unit square margin {MARGIN}")
        return self

    def bounds(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        if self.kind == "circle":
            ex = ey = self.size[0]
        elif self.kind == "rectangle":
            ex, ey = self.size
        else:
            half, r = self.size
            ex = half * abs(np.cos(self.angle)) + r
            ey = half * abs(np.sin(self.angle)) + r
        return cx - ex, cy - ey, cx + ex, cy + ey

    def area(self) -> float:
        if self.kind == "circle":
            return float(np.pi * self.size[0] ** 2)
        if self.kind == "rectangle":
            return float(4.0 * self.size[0] * self.size[1])
        half, r = self.size
        return float(4.0 * half * r + np.pi * r * r)

    def _capsule_ends(self) -> tuple[np.ndarray, np.ndarray]:
        half = self.size[0]
        axis = np.array([np.cos(self.angle), np.sin(self.angle)])
        c = np.asarray(self.center)
        return c - half * axis, c + half * axis


def analytic_sdf(shape: Shape, p) -> np.ndarray | float:
    """Exact signed distance to the shape boundary, negative inside."""
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    c = np.asarray(shape.center)
    if shape.kind == "circle":
        d = np.linalg.norm(pts - c, axis=1) - shape.size[0]
    elif shape.kind == "rectangle":
        q = np.abs(pts - c) - np.asarray(shape.size)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        d = outside + inside
    else:
        a, b = shape._capsule_ends()
        ba = b - a
        pa = pts - a
        t = np.clip(pa @ ba / (ba @ ba), 0.0, 1.0)
        d = np.linalg.norm(pa - t[:, None] * ba, axis=1) - shape.size[1]
    return float(d[0]) if single else d


def _boundary_pieces(shape: Shape) -> list[tuple]:
    """Boundary as ("line", start, end, normal) and ("arc", centre, radius, theta0, theta1) pieces."""
    cx, cy = shape.center
    if shape.kind == "circle":
        return [("arc", np.array([cx, cy]), shape.size[0], 0.0, 2.0 * np.pi)]
    if shape.kind == "rectangle":
        hx, hy = shape.size
        x0, y0, x1, y1 = cx - hx, cy - hy, cx + hx, cy + hy
        return [
            ("line", np.array([x0, y0]), np.array([x1, y0]), np.array([0.0, -1.0])),
            ("line", np.array([x1, y0]), np.array([x1, y1]), np.array([1.0, 0.0])),
            ("line", np.array([x1, y1]), np.array([x0, y1]), np.array([0.0, 1.0])),
            ("line", np.array([x0, y1]), np.array([x0, y0]), np.array([-1.0, 0.0])),
        ]
    r = shape.size[1]
    a, b = shape._capsule_ends()
    side = np.array([-np.sin(shape.angle), np.cos(shape.angle)])
    theta = shape.angle + np.pi / 2.0
    return [
        ("line", a + r * side, b + r * side, side),
        ("arc", b, r, theta, theta - np.pi),
        ("line", b - r * side, a - r * side, -side),
        ("arc", a, r, theta - np.pi, theta - 2.0 * np.pi),
    ]


def _piece_length(piece) -> float:
    if piece[0] == "line":
        return float(np.linalg.norm(piece[2] - piece[1]))
    return float(piece[2] * abs(piece[4] - piece[3]))


def _piece_point(piece, frac: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if piece[0] == "line":
        _, start, end, normal = piece
        pts = start + frac[:, None] * (end - start)
        return pts, np.tile(normal, (len(frac), 1))
    _, centre, radius, t0, t1 = piece
    theta = t0 + frac * (t1 - t0)
    normals = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return centre + radius * normals, normals


def surface_samples(shape: Shape, n: int, offsets: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """n boundary points spread evenly by arc length, with outward unit normals.

    offsets, if given, are arc-length fractions in [0, 1) instead of the even spread.
    """
    pieces = _boundary_pieces(shape)
    lengths = np.array([_piece_length(pc) for pc in pieces])
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    s = ((np.arange(n) + 0.5) / n if offsets is None else np.asarray(offsets)) * cum[-1]
    which = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(pieces) - 1)
    points = np.empty((len(s), 2))
    normals = np.empty((len(s), 2))
    for k, piece in enumerate(pieces):
        mask = which == k
        if mask.any():
            frac = (s[mask] - cum[k]) / lengths[k]
            points[mask], normals[mask] = _piece_point(piece, frac)
    return points, normals


def pixel_centers(height: int, width: int) -> np.ndarray:
    """(H*W, 2) array of (x, y) pixel centres, row-major."""
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    X, Y = np.meshgrid(xs, ys)
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def grid_points(resolution: int) -> np.ndarray:
    return pixel_centers(resolution, resolution)


def render(shape: Shape, height: int = 32, width: int = 32) -> np.ndarray:
    """Antialiased raster of the shape on a mid-grey background, (H, W, 3) in [0, 1]."""
    if height < 8 or width < 8:
        raise ConfigurationError(f"images must be at least 8x8, got {height}x{width}")
    d = analytic_sdf(shape, pixel_centers(height, width)).reshape(height, width)
    pixel = 1.0 / max(height, width)
    coverage = np.clip(0.5 - d / pixel, 0.0, 1.0)[..., None]
    color = np.asarray(shape.color)
    return (1.0 - coverage) * BACKGROUND + coverage * color


def occupancy_grid(shape: Shape, resolution: int) -> np.ndarray:
    return (analytic_sdf(shape, grid_points(resolution)) < 0.0).reshape(resolution, resolution)


def random_shape(rng: np.random.Generator) -> Shape:
    kind = SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))]
    color = tuple(float(c) for c in hsv_to_rgb([rng.uniform(0, 1), rng.uniform(0.6, 1), rng.uniform(0.6, 1)]))
    angle = 0.0
    if kind == "circle":
        size = (rng.uniform(0.1, 0.3),)
        ex = ey = size[0]
    elif kind == "rectangle":
        size = (rng.uniform(0.08, 0.3), rng.uniform(0.08, 0.3))
        ex, ey = size
    else:
        size = (rng.uniform(0.08, 0.25), rng.uniform(0.05, 0.12))
        angle = rng.uniform(0, np.pi)
        ex = size[0] * abs(np.cos(angle)) + size[1]
        ey = size[0] * abs(np.sin(angle)) + size[1]
    center = (rng.uniform(MARGIN + ex, 1 - MARGIN - ex), rng.uniform(MARGIN + ey, 1 - MARGIN - ey))
    return Shape(kind=kind, center=center, size=tuple(float(s) for s in size), angle=float(angle), color=color)


def sample_queries(shape: Shape, n_queries: int, rng: np.random.Generator) -> np.ndarray:
    """Half uniform in the square, half jittered around the boundary."""
    n_uniform = n_queries // 2
    uniform = rng.random((n_uniform, 2))
    near, _ = surface_samples(shape, n_queries - n_uniform, offsets=rng.random(n_queries - n_uniform))
    near = np.clip(near + rng.normal(0.0, 0.02, near.shape), 0.0, 1.0)
    return np.concatenate([uniform, near])


@dataclass(frozen=True, eq=False)
class Sample:
    index: int
    image: np.ndarray
    points: np.ndarray
    labeled: bool
    _gt_sdf: np.ndarray | None = field(default=None, repr=False)
    _occupancy: np.ndarray | None = field(default=None, repr=False)
    _shape: Shape | None = field(default=None, repr=False)
    gt_locked: bool = False

    def _ground_truth(self, attr: str):
        if self.gt_locked and not self.labeled:
            raise GroundTruthAccessError(f"sample {self.index} is unlabeled; its ground truth is hidden from training")
        value = getattr(self, attr)
        if value is None:
            raise GroundTruthAccessError(f"sample {self.index} carries no ground truth")
        return value

    @property
    def gt_sdf(self) -> np.ndarray:
        return self._ground_truth("_gt_sdf")

    @property
    def occupancy(self) -> np.ndarray:
        return self._ground_truth("_occupancy")

    @property
    def shape(self) -> Shape:
        return self._ground_truth("_shape")

    @property
    def has_ground_truth(self) -> bool:
        return self._gt_sdf is not None

    def locked(self) -> "Sample":
        return replace(self, gt_locked=True)

    def unlocked(self) -> "Sample":
        return replace(self, gt_locked=False)


@dataclass(frozen=True, eq=False)
class AugmentedPair:
    weak: np.ndarray
    strong: np.ndarray
    source: Sample
    weak_angle: float = 0.0


def make_sample(index: int, shape: Shape, labeled: bool, rng: np.random.Generator,
                height: int = 32, width: int = 32, grid: int = 64, n_queries: int = 64) -> Sample:
    points = sample_queries(shape, n_queries, rng)
    return Sample(
        index=index,
        image=render(shape, height, width),
        points=points,
        labeled=labeled,
        _gt_sdf=analytic_sdf(shape, points),
        _occupancy=occupancy_grid(shape, grid),
        _shape=shape,
    )


def gen_dataset(n: int, labeled_fraction: float, seed: int, *, height: int = 32, width: int = 32,
                grid: int = 64, n_queries: int = 64) -> list[Sample]:
    """Seed-deterministic dataset; exactly round(n * labeled_fraction) samples are labeled."""
    if n < 10:
        raise ConfigurationError(f"dataset needs at least 10 samples, got {n}")
    if not 0.0 < labeled_fraction <= 1.0:
        raise ConfigurationError(f"labeled_fraction must lie in (0, 1], got {labeled_fraction}")
    n_labeled = int(round(n * labeled_fraction))
    assign_seq, *sample_seqs = np.random.SeedSequence(seed).spawn(n + 1)
    labeled = set(np.random.default_rng(assign_seq).permutation(n)[:n_labeled].tolist())

    samples = []
    for i, seq in enumerate(sample_seqs):
        rng = np.random.default_rng(seq)
        shape = random_shape(rng)
        samples.append(make_sample(i, shape, i in labeled, rng, height, width, grid, n_queries))
    logger.info(f"Generated {n} samples ({n_labeled} labeled) with seed {seed}")
    return samples


def lock_unlabeled(samples: list[Sample]) -> list[Sample]:
    return [s.locked() for s in samples]


# -- image features -----------------------------------------------------------


def image_features(images: np.ndarray, cells: int) -> np.ndarray:
    """Block-average to cells x cells x 3, centred on the background grey.

    Works on one (H, W, 3) image or a stack (..., H, W, 3); the cells are
    flattened into the last axis.
    """
    H, W = images.shape[-3:-1]
    if H % cells or W % cells:
        raise ShapeError(f"{H}x{W} image does not split into {cells}x{cells} cells")
    lead = images.shape[:-3]
    pooled = images.reshape(*lead, cells, H // cells, cells, W // cells, 3).mean(axis=(-4, -2))
    return (pooled - BACKGROUND).reshape(*lead, 3 * cells * cells)


def foreground_maps(images: np.ndarray) -> np.ndarray:
    """(N, H, W) colour distance of every pixel from its image's border colour, clipped to [0, 1]."""
    border = np.concatenate(
        [images[:, 0], images[:, -1], images[:, 1:-1, 0], images[:, 1:-1, -1]], axis=1)
    background = np.median(border, axis=1)
    return np.clip(np.linalg.norm(images - background[:, None, None, :], axis=-1), 0.0, 1.0)


# -- augmentation -------------------------------------------------------------
#
# Every operation works on an (N, H, W, 3) stack with one parameter per image.

LUMA = np.array([0.299, 0.587, 0.114])


def _per_image(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).reshape(-1, 1, 1, 1)


def adjust_brightness(images: np.ndarray, factor) -> np.ndarray:
    return images * factor


def adjust_contrast(images: np.ndarray, factor: np.ndarray) -> np.ndarray:
    mean = images.mean(axis=(-3, -2, -1), keepdims=True)
    return images * factor + mean * (1.0 - factor)


def adjust_saturation(images: np.ndarray, factor: np.ndarray) -> np.ndarray:
    gray = (images @ LUMA)[..., None]
    return images * factor + gray * (1.0 - factor)


def hue_matrices(degrees: np.ndarray) -> np.ndarray:
    """(N, 3, 3) luminance-preserving hue rotations; grey maps to itself."""
    t = np.deg2rad(np.asarray(degrees, dtype=np.float64))
    c, s = np.cos(t)[:, None, None], np.sin(t)[:, None, None]
    base = np.array([[0.213, 0.715, 0.072]] * 3)
    cos_part = np.array([[0.787, -0.715, -0.072], [-0.213, 0.285, -0.072], [-0.213, -0.715, 0.928]])
    sin_part = np.array([[-0.213, -0.715, 0.928], [0.143, 0.140, -0.283], [-0.787, 0.715, 0.072]])
    return base + c * cos_part + s * sin_part


def rotate_hue(images: np.ndarray, degrees: np.ndarray) -> np.ndarray:
    return np.einsum("nhwc,nkc->nhwk", images, hue_matrices(degrees))


def _rotation(degrees: float) -> np.ndarray:
    t = np.deg2rad(degrees)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def rotate_images(images: np.ndarray, degrees: np.ndarray) -> np.ndarray:
    """Rotate each image about its centre (bilinear, background fill); matches rotate_points.

    Images with a zero angle are returned untouched.
    """
    degrees = np.asarray(degrees, dtype=np.float64)
    turn = np.flatnonzero(degrees != 0.0)
    if turn.size == 0:
        return images
    N, H, W, C = len(turn), *images.shape[1:]
    base = pixel_centers(H, W) - 0.5
    t = np.deg2rad(degrees[turn])[:, None]
    # row-vector form of R(-theta) q for every output pixel
    src_x = base[:, 0] * np.cos(t) + base[:, 1] * np.sin(t)
    src_y = -base[:, 0] * np.sin(t) + base[:, 1] * np.cos(t)
    rows = ((src_y + 0.5) * H - 0.5).reshape(N, H, W)
    cols = ((src_x + 0.5) * W - 0.5).reshape(N, H, W)
    layer = np.broadcast_to(np.arange(N, dtype=np.float64)[:, None, None], rows.shape)
    source = images[turn]
    rotated = np.stack([
        ndimage.map_coordinates(source[..., ch], [layer, rows, cols], order=1, mode="constant", cval=BACKGROUND)
        for ch in range(C)
    ], axis=-1)
    out = np.array(images, copy=True)
    out[turn] = rotated
    return out


def rotate_image(image: np.ndarray, degrees: float) -> np.ndarray:
    return rotate_images(image[None], np.array([degrees]))[0]


def rotate_points(points: np.ndarray, degrees: float) -> np.ndarray:
    """Where points of the source image land after rotate_image."""
    if degrees == 0.0:
        return points
    return (points - 0.5) @ _rotation(degrees).T + 0.5


def gaussian_blur3(images: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    """Separable 3x3 Gaussian with a per-image sigma, edge pixels repeated."""
    g = np.exp(-1.0 / (2.0 * np.asarray(sigmas, dtype=np.float64) ** 2))
    side = _per_image(g / (1.0 + 2.0 * g))
    centre = 1.0 - 2.0 * side
    padded = np.pad(images, ((0, 0), (1, 1), (0, 0), (0, 0)), mode="edge")
    out = centre * images + side * (padded[:, :-2] + padded[:, 2:])
    padded = np.pad(out, ((0, 0), (0, 0), (1, 1), (0, 0)), mode="edge")
    return centre * out + side * (padded[:, :, :-2] + padded[:, :, 2:])


def add_noise(images: np.ndarray, sigmas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return images + rng.normal(size=images.shape) * _per_image(sigmas)


@dataclass(frozen=True)
class WeakParams:
    brightness: float = 0.0  # relative, within +-0.10
    contrast: float = 0.0
    angle_deg: float = 0.0
    noise_sigma: float = 0.0


@dataclass(frozen=True)
class StrongParams:
    brightness: float
    contrast: float
    saturation: float
    hue_deg: float
    blur_sigma: float
    erase_blocks: tuple[tuple[int, int, int, int], ...]  # (top, left, height, width)
    noise_sigma: float

    def __post_init__(self):
        if not 1 <= len(self.erase_blocks) <= 4:
            raise ConfigurationError(f"strong augmentation needs 1-4 erasing blocks, got {len(self.erase_blocks)}")
        if not 0.5 <= self.blur_sigma <= 1.5:
            raise ConfigurationError(f"blur sigma must lie in [0.5, 1.5], got {self.blur_sigma}")


def sample_weak_params(rng: np.random.Generator) -> WeakParams:
    return WeakParams(
        brightness=rng.uniform(-0.1, 0.1),
        contrast=rng.uniform(-0.1, 0.1),
        angle_deg=rng.uniform(-20.0, 20.0),
        noise_sigma=rng.uniform(0.0, 0.02),
    )


def sample_strong_params(rng: np.random.Generator, height: int, width: int) -> StrongParams:
    blocks = []
    for _ in range(int(rng.integers(1, 5))):
        area = rng.uniform(0.02, 0.10) * height * width
        aspect = rng.uniform(0.5, 2.0)
        h = int(np.clip(round(np.sqrt(area * aspect)), 1, height))
        w = int(np.clip(round(np.sqrt(area / aspect)), 1, width))
        blocks.append((int(rng.integers(0, height - h + 1)), int(rng.integers(0, width - w + 1)), h, w))
    return StrongParams(
        brightness=rng.uniform(-0.4, 0.4),
        contrast=rng.uniform(-0.4, 0.4),
        saturation=rng.uniform(-0.4, 0.4),
        hue_deg=rng.uniform(-30.0, 30.0),
        blur_sigma=rng.uniform(0.5, 1.5),
        erase_blocks=tuple(blocks),
        noise_sigma=rng.uniform(0.0, 0.08),
    )


def apply_weak_batch(images: np.ndarray, params: Sequence[WeakParams], rng: np.random.Generator) -> np.ndarray:
    if len(params) != len(images):
        raise ShapeError(f"{len(params)} weak parameter sets for {len(images)} images")
    out = adjust_brightness(images, _per_image([1.0 + p.brightness for p in params]))
    out = adjust_contrast(out, _per_image([1.0 + p.contrast for p in params]))
    out = rotate_images(out, np.array([p.angle_deg for p in params]))
    out = add_noise(out, [p.noise_sigma for p in params], rng)
    return np.clip(out, 0.0, 1.0)


def apply_strong_batch(images: np.ndarray, params: Sequence[StrongParams], rng: np.random.Generator) -> np.ndarray:
    if len(params) != len(images):
        raise ShapeError(f"{len(params)} strong parameter sets for {len(images)} images")
    out = adjust_brightness(images, _per_image([1.0 + p.brightness for p in params]))
    out = adjust_contrast(out, _per_image([1.0 + p.contrast for p in params]))
    out = adjust_saturation(out, _per_image([1.0 + p.saturation for p in params]))
    out = rotate_hue(out, np.array([p.hue_deg for p in params]))
    out = gaussian_blur3(out, np.array([p.blur_sigma for p in params]))
    for n, p in enumerate(params):
        for top, left, h, w in p.erase_blocks:
            out[n, top:top + h, left:left + w] = rng.random((h, w, out.shape[3]))
    out = add_noise(out, [p.noise_sigma for p in params], rng)
    return np.clip(out, 0.0, 1.0)


def apply_weak(image: np.ndarray, params: WeakParams, rng: np.random.Generator) -> np.ndarray:
    return apply_weak_batch(image[None], [params], rng)[0]


def apply_strong(image: np.ndarray, params: StrongParams, rng: np.random.Generator) -> np.ndarray:
    return apply_strong_batch(image[None], [params], rng)[0]


def weak_augment_batch(images: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Weak views of a stack plus the rotation angle drawn for each image."""
    params = [sample_weak_params(rng) for _ in range(len(images))]
    return apply_weak_batch(images, params, rng), np.array([p.angle_deg for p in params])


def strong_augment_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    H, W = images.shape[1:3]
    params = [sample_strong_params(rng, H, W) for _ in range(len(images))]
    return apply_strong_batch(images, params, rng)


def weak_augment(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return weak_augment_batch(image[None], rng)[0][0]


def strong_augment(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return strong_augment_batch(image[None], rng)[0]


def augment_pairs(samples: Sequence[Sample], rng: np.random.Generator) -> list[AugmentedPair]:
    """One weak and one strong view per sample, drawn for the whole batch at once."""
    if not samples:
        return []
    images = np.stack([s.image for s in samples])
    weak, angles = weak_augment_batch(images, rng)
    strong = strong_augment_batch(images, rng)
    return [AugmentedPair(weak=weak[k], strong=strong[k], source=s, weak_angle=float(angles[k]))
            for k, s in enumerate(samples)]


def augment_pair(sample: Sample, rng: np.random.Generator) -> AugmentedPair:
    return augment_pairs([sample], rng)[0]


# -- dataset container --------------------------------------------------------


class DatasetHeader(BaseModel):
    format_version: int = DATASET_FORMAT_VERSION
    n: int
    labeled_fraction: float
    seed: int
    H: int
    W: int
    G: int
    n_queries: int
    gt_stripped: bool = False


def save_dataset(path: str | Path, samples: list[Sample], header: DatasetHeader,
                 strip_unlabeled_gt: bool = False) -> Path:
    """Write one compressed .npz; unlabeled ground truth can be left out entirely."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = header.model_copy(update={"gt_stripped": strip_unlabeled_gt})
    keep = [s for s in samples if s.labeled or not strip_unlabeled_gt]
    keep = [s.unlocked() for s in keep if s.has_ground_truth]
    G = header.G
    np.savez_compressed(
        path,
        header=np.array(header.model_dump_json()),
        images=np.stack([s.image for s in samples]),
        points=np.stack([s.points for s in samples]),
        labeled=np.array([s.labeled for s in samples], dtype=bool),
        gt_index=np.array([s.index for s in keep], dtype=np.int64),
        gt_sdf=np.stack([s.gt_sdf for s in keep]) if keep else np.zeros((0, header.n_queries)),
        occupancy=np.stack([s.occupancy for s in keep]) if keep else np.zeros((0, G, G), dtype=bool),
        shapes=np.array(json.dumps([s.shape.model_dump(mode="json") for s in keep])),
    )
    logger.info(f"Wrote {len(samples)} samples to {path} (unlabeled gt stripped: {strip_unlabeled_gt})")
    return path


def load_dataset(path: str | Path, lock_unlabeled_gt: bool = True) -> tuple[DatasetHeader, list[Sample]]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"dataset file {path} does not exist; run gen-data first")
    with np.load(path, allow_pickle=False) as data:
        header = DatasetHeader.model_validate_json(str(data["header"]))
        if header.format_version != DATASET_FORMAT_VERSION:
            raise ConfigurationError(f"unsupported dataset format {header.format_version}")
        gt_rows = {int(idx): row for row, idx in enumerate(data["gt_index"])}
        shapes = [Shape.model_validate(s) for s in json.loads(str(data["shapes"]))]
        images, points, labeled = data["images"], data["points"], data["labeled"]
        gt_sdf, occupancy = data["gt_sdf"], data["occupancy"]
        samples = []
        for i in range(len(images)):
            row = gt_rows.get(i)
            samples.append(Sample(
                index=i,
                image=images[i],
                points=points[i],
                labeled=bool(labeled[i]),
                _gt_sdf=None if row is None else gt_sdf[row],
                _occupancy=None if row is None else occupancy[row],
                _shape=None if row is None else shapes[row],
                gt_locked=lock_unlabeled_gt,
            ))
    return header, samples
