import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon

from lttr.metrics import (DIST_THRESHOLDS, clip_convex, evaluate_many, evaluate_ope, iou_3d, polygon_area,
                          success_precision)
from lttr.scene import Box3D

GRID_STEP = 0.01


def shapely_iou(a: Box3D, b: Box3D) -> float:
    inter = Polygon(a.corners_bev()).intersection(Polygon(b.corners_bev())).area
    za = (a.center[2] - a.size[2] / 2, a.center[2] + a.size[2] / 2)
    zb = (b.center[2] - b.size[2] / 2, b.center[2] + b.size[2] / 2)
    inter *= max(0.0, min(za[1], zb[1]) - max(za[0], zb[0]))
    return inter / (a.volume + b.volume - inter)


boxes = st.builds(
    lambda x, y, z, w, l, h, yaw: Box3D((x, y, z), (w, l, h), yaw),
    st.floats(-2, 2), st.floats(-2, 2), st.floats(-0.5, 0.5),
    st.floats(0.5, 2.5), st.floats(0.5, 4.5), st.floats(0.5, 2.0), st.floats(-math.pi, math.pi))


def track(n=10, seed=0):
    rng = np.random.default_rng(seed)
    return [Box3D(rng.uniform(-5, 5, 3), (1.8, 4.0, 1.5), rng.uniform(-3, 3)) for _ in range(n)]


class TestIoU:
    def test_half_offset_unit_cubes(self):
        a = Box3D((0, 0, 0), (1, 1, 1))
        b = Box3D((0.5, 0, 0), (1, 1, 1))
        assert iou_3d(a, b) == pytest.approx(1 / 3, abs=1e-12)

    def test_rotated_square_in_square(self):
        # a unit square turned 45 degrees inside a 2x2 square; identical heights
        a = Box3D((0, 0, 0), (2, 2, 1))
        b = Box3D((0, 0, 0), (1, 1, 1), math.pi / 4)
        assert iou_3d(a, b) == pytest.approx(1 / 4, abs=1e-12)

    def test_disjoint(self):
        assert iou_3d(Box3D((0, 0, 0), (1, 1, 1)), Box3D((5, 0, 0), (1, 1, 1))) == 0.0
        assert iou_3d(Box3D((0, 0, 0), (1, 1, 1)), Box3D((0, 0, 3), (1, 1, 1))) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(boxes, boxes)
    def test_matches_shapely(self, a, b):
        assert iou_3d(a, b) == pytest.approx(shapely_iou(a, b), abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(boxes, boxes)
    def test_symmetric_and_bounded(self, a, b):
        v = iou_3d(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(iou_3d(b, a), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(boxes)
    def test_self_iou_is_one(self, a):
        assert iou_3d(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_clip_and_area(self):
        square = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], dtype=float)
        shifted = square + 1.0
        assert polygon_area(clip_convex(square, shifted)) == pytest.approx(1.0)
        assert polygon_area(np.zeros((2, 2))) == 0.0


class TestOpe:
    def test_perfect_track(self):
        gt = track()
        r = evaluate_ope(gt, gt)
        assert r.success >= 1.0 - GRID_STEP
        assert r.precision == 1.0

    def test_constant_one_metre_error(self):
        gt = track()
        pred = [gt[0]] + [Box3D(np.add(b.center, [0.0, 0.0, 1.0]), (0.1, 0.1, 0.1), b.yaw) for b in gt[1:]]
        r = evaluate_ope(pred, gt)
        assert r.precision == pytest.approx(0.5, abs=GRID_STEP)
        assert r.success <= GRID_STEP
        np.testing.assert_allclose(r.errors, 1.0, atol=1e-12)

    def test_half_offset_cubes_per_frame(self):
        gt = [Box3D((i, 0, 0), (1, 1, 1)) for i in range(5)]
        pred = [gt[0]] + [Box3D((i + 0.5, 0, 0), (1, 1, 1)) for i in range(1, 5)]
        np.testing.assert_allclose(evaluate_ope(pred, gt).ious, 1 / 3, atol=1e-12)

    def test_first_frame_not_scored(self):
        gt = track(4)
        pred = [Box3D((100, 100, 100), (1, 1, 1))] + gt[1:]
        assert len(evaluate_ope(pred, gt).ious) == 3
        assert evaluate_ope(pred, gt).precision == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            evaluate_ope(track(3), track(4))

    def test_step_function_auc(self):
        s, p = success_precision([0.5, 0.5], [0.3, 0.3])
        # IoU 0.5 exceeds thresholds 0.00..0.49 (50 of 101)
        assert s == pytest.approx(50 / 101)
        # distance 0.3 is within thresholds 0.30..2.00 (86 of 101)
        assert p == pytest.approx(np.mean(DIST_THRESHOLDS >= 0.3 - 1e-12))

    def test_rigid_transform_invariance(self):
        gt = track(8, 1)
        rng = np.random.default_rng(2)
        pred = [Box3D(np.add(b.center, rng.normal(0, 0.3, 3)), b.size, b.yaw + rng.normal(0, 0.2)) for b in gt]
        ref = Box3D((3.0, -7.0, 0.4), (1, 1, 1), 1.2)

        def move(b):
            return Box3D(ref.to_world(np.array(b.center))[0], b.size, b.yaw + ref.yaw)

        a = evaluate_ope(pred, gt)
        b = evaluate_ope([move(x) for x in pred], [move(x) for x in gt])
        np.testing.assert_allclose(a.ious, b.ious, atol=1e-9)
        np.testing.assert_allclose(a.errors, b.errors, atol=1e-9)

    def test_monotone_in_noise(self):
        gt = track(30, 3)
        medians = []
        for scale in (0.0, 0.2, 0.5, 1.0):
            runs = []
            for seed in range(7):
                rng = np.random.default_rng(seed)
                pred = [Box3D(np.add(b.center, rng.uniform(-scale, scale, 3)), b.size, b.yaw) for b in gt]
                r = evaluate_ope(pred, gt)
                runs.append((r.success, r.precision))
            medians.append(np.median(runs, axis=0))
        medians = np.array(medians)
        assert np.all(np.diff(medians[:, 0]) <= 0) and np.all(np.diff(medians[:, 1]) <= 0)

    def test_pooled_and_dict(self):
        gt = track(5)
        r = evaluate_many([(gt, gt), (gt, gt)])
        assert len(r.ious) == 8
        d = r.to_dict()
        assert set(d) == {"success", "precision", "per_frame"} and len(d["per_frame"]) == 8
