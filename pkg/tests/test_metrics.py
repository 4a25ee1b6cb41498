import math

import numpy as np
import pytest

from core.data import Shape, analytic_sdf, grid_points, occupancy_grid
from core.errors import EmptySurfaceError, NumericError, PreconditionError, ShapeError
from core.metrics import (
    WORST_CHAMFER_X100,
    MetricsReport,
    SdfGrid,
    SurfaceSamples,
    chamfer_l1,
    extract_isocontour,
    fscore,
    fscore_threshold,
    iou,
    normal_consistency,
    score_grid,
)

G = 64


def _circle(cx=0.5, cy=0.5, r=0.2):
    return Shape(kind="circle", center=(cx, cy), size=(r,), color=(0.2, 0.4, 0.8))


def _grid(shape, resolution=G):
    return SdfGrid(analytic_sdf(shape, grid_points(resolution)).reshape(resolution, resolution))


def _points(points, normals=None):
    points = np.asarray(points, dtype=float)
    if normals is None:
        normals = np.tile([1.0, 0.0], (len(points), 1))
    return SurfaceSamples(points, normals)


def _random_surface(rng, n):
    angles = rng.uniform(0, 2 * np.pi, n)
    return SurfaceSamples(rng.random((n, 2)), np.stack([np.cos(angles), np.sin(angles)], axis=1))


def test_grid_validation():
    with pytest.raises(ShapeError):
        SdfGrid(np.zeros((8, 9)))
    with pytest.raises(ShapeError):
        SdfGrid(np.zeros((4, 4)))
    bad = np.zeros((8, 8))
    bad[2, 3] = np.nan
    with pytest.raises(NumericError):
        SdfGrid(bad)
    with pytest.raises(NumericError):
        SurfaceSamples(np.zeros((1, 2)), np.array([[2.0, 0.0]]))


def test_circle_contour_lies_on_circle():
    surface = extract_isocontour(_grid(_circle()))
    radius = np.linalg.norm(surface.points - 0.5, axis=1)
    assert np.max(np.abs(radius - 0.2)) < 1.5 / G
    assert len(surface) > 50


def test_circle_normals_point_outward():
    surface = extract_isocontour(_grid(_circle()))
    radial = (surface.points - 0.5) / np.linalg.norm(surface.points - 0.5, axis=1)[:, None]
    assert np.min(np.sum(surface.normals * radial, axis=1)) > 0.99


def test_no_zero_crossing_is_an_empty_surface():
    with pytest.raises(EmptySurfaceError):
        extract_isocontour(SdfGrid(np.full((16, 16), -0.3)))
    with pytest.raises(EmptySurfaceError):
        extract_isocontour(SdfGrid(np.full((16, 16), 0.3)))


def test_chamfer_examples():
    a = _points([[0.3, 0.7], [0.1, 0.2]])
    assert chamfer_l1(a, a) == 0.0
    assert 100.0 * chamfer_l1(_points([[0.0, 0.0]]), _points([[0.0, 0.1]])) == pytest.approx(10.0, abs=1e-12)
    with pytest.raises(PreconditionError):
        chamfer_l1(a, _points(np.zeros((0, 2))))


def test_chamfer_matches_brute_force(rng):
    for _ in range(10):
        A = _random_surface(rng, int(rng.integers(1, 200)))
        B = _random_surface(rng, int(rng.integers(1, 200)))
        d = np.linalg.norm(A.points[:, None, :] - B.points[None, :, :], axis=2)
        brute = 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())
        assert chamfer_l1(A, B) == pytest.approx(brute, abs=1e-12)
        assert chamfer_l1(A, B) == chamfer_l1(B, A)


def test_metric_identities(rng):
    for _ in range(50):
        A = _random_surface(rng, int(rng.integers(2, 100)))
        assert chamfer_l1(A, A) == 0.0
        assert fscore(A, A, 0.01) == 100.0
        assert normal_consistency(A, A) == pytest.approx(1.0, abs=1e-12)
        occupancy = rng.random((8, 8)) < 0.5
        assert iou(SdfGrid(np.where(occupancy, -1.0, 1.0)), occupancy) == 100.0


def test_iou_examples():
    gt = np.zeros((8, 8), dtype=bool)
    gt[:4, :4] = True
    pred = np.ones((8, 8))
    pred[:4, 2:6] = -1.0
    assert iou(SdfGrid(pred), gt) == pytest.approx(100.0 / 3.0)

    far = np.ones((8, 8))
    far[6:, 6:] = -1.0
    assert iou(SdfGrid(far), gt) == 0.0
    assert iou(SdfGrid(np.ones((8, 8))), np.zeros((8, 8), dtype=bool)) == 100.0
    with pytest.raises(ShapeError):
        iou(SdfGrid(pred), np.zeros((16, 16), dtype=bool))


def test_metrics_ignore_ordering(rng):
    A, B = _random_surface(rng, 60), _random_surface(rng, 80)
    perm = rng.permutation(60)
    shuffled = SurfaceSamples(A.points[perm], A.normals[perm])
    assert fscore(A, B, 0.05) == fscore(shuffled, B, 0.05)
    assert chamfer_l1(A, B) == pytest.approx(chamfer_l1(shuffled, B), abs=1e-15)


def test_fscore_examples():
    A = _points([[0.1, 0.1], [0.5, 0.5]])
    B = _points([[0.1, 0.1], [0.5, 0.5], [0.9, 0.1], [0.1, 0.9]])
    assert fscore(A, B, 0.01) == pytest.approx(2 * 0.5 / 1.5 * 100, abs=1e-12)
    assert fscore(_points([[0.0, 0.0]]), _points([[0.5, 0.5]]), 0.01) == 0.0
    with pytest.raises(PreconditionError):
        fscore(A, B, 0.0)


def test_fscore_threshold_is_one_percent_of_diagonal():
    rect = Shape(kind="rectangle", center=(0.5, 0.5), size=(0.3, 0.4), color=(0.0, 0.0, 0.0))
    assert fscore_threshold(rect) == pytest.approx(0.01 * math.hypot(0.6, 0.8))


def test_normal_consistency_examples(rng):
    A = _random_surface(rng, 30)
    rotated = SurfaceSamples(A.points, A.normals @ np.array([[0.0, 1.0], [-1.0, 0.0]]))
    assert normal_consistency(A, rotated) == pytest.approx(0.0, abs=1e-12)
    flipped = SurfaceSamples(A.points, -A.normals)
    assert normal_consistency(A, flipped) == pytest.approx(1.0, abs=1e-12)


def test_concentric_circles_have_consistent_normals():
    inner = extract_isocontour(_grid(_circle(r=0.2)))
    outer = extract_isocontour(_grid(_circle(r=0.25)))
    assert normal_consistency(inner, outer) == pytest.approx(1.0, abs=0.02)


def test_translation_degrades_metrics():
    gt = _circle()
    occupancy = occupancy_grid(gt, G)
    reports = [score_grid(_grid(_circle(cx=0.5 + off)), gt, occupancy) for off in (0.02, 0.04, 0.06, 0.08, 0.10)]
    chamfers = [r.chamfer_x100 for r in reports]
    ious = [r.iou_pct for r in reports]
    assert all(a < b for a, b in zip(chamfers, chamfers[1:])), chamfers
    assert all(a > b for a, b in zip(ious, ious[1:])), ious


def test_exact_prediction_scores_near_perfect():
    shape = _circle(0.45, 0.55, 0.25)
    report = score_grid(_grid(shape), shape, occupancy_grid(shape, G))
    assert report.chamfer_x100 < 0.5
    assert report.iou_pct == 100.0
    assert report.fscore_pct > 90.0
    assert report.normal_consistency > 0.98
    assert not report.empty_surface


def test_empty_prediction_scores_worst_case():
    shape = _circle()
    report = score_grid(SdfGrid(np.full((G, G), 1.0)), shape, occupancy_grid(shape, G))
    assert report.empty_surface
    assert report.chamfer_x100 == WORST_CHAMFER_X100 == pytest.approx(100 * math.sqrt(2))
    assert (report.iou_pct, report.fscore_pct, report.normal_consistency) == (0.0, 0.0, 0.0)


def test_report_mean():
    mean = MetricsReport.mean([MetricsReport(chamfer_x100=1.0, iou_pct=90.0, fscore_pct=80.0, normal_consistency=0.9),
                               MetricsReport.worst()])
    assert mean.iou_pct == 45.0
    assert mean.empty_surface
    with pytest.raises(PreconditionError):
        MetricsReport.mean([])
