"""Oracle and geometric detectors, matching, and regression error."""

import math

import numpy as np
import pytest

from drivetrace.detector import (
    ClusterParams,
    NoiseModel,
    box_regression_error,
    geometric_detect,
    match_boxes,
    oracle_detect,
    points_in_box,
)
from drivetrace.risk import shannon_entropy
from drivetrace.scene import GroundTruthObject, ObjectClass, OrientedBox, PointCloud, Scene, EgoState
from conftest import tiny_scene


def gt_vehicle(x, y=0.0, yaw=0.0, velocity=(0.0, 0.0, 0.0)):
    return GroundTruthObject(OrientedBox((x, y, 0.8), 4.5, 1.9, 1.6, yaw),
                             ObjectClass.VEHICLE, velocity)


class TestOracleDetect:
    def test_zero_noise_identity(self):
        gts = [gt_vehicle(10.0, yaw=0.3, velocity=(5, 0, 0)), gt_vehicle(20.0, -2.0)]
        scene = tiny_scene(gts)
        dets = oracle_detect(scene, NoiseModel(seed=1))
        assert len(dets) == 2
        for det, gt in zip(dets, gts):
            assert det.box == gt.box
            assert det.velocity == gt.velocity
            # temperature -> 0 limit: one-hot, entropy 0
            assert det.class_dist.probs[gt.label.index] == pytest.approx(1.0)
            assert shannon_entropy(det.class_dist) == pytest.approx(0.0, abs=1e-8)

    def test_requires_ground_truth(self):
        scene = Scene(0.0, EgoState(), PointCloud(), (), None)
        with pytest.raises(ValueError):
            oracle_detect(scene, NoiseModel())

    def test_seed_reproducible(self):
        scene = tiny_scene([gt_vehicle(10.0)])
        noise = NoiseModel(pos_std=0.3, dim_std=0.1, yaw_std=0.1, seed=7)
        a = oracle_detect(scene, noise)
        b = oracle_detect(scene, noise)
        assert a == b
        c = oracle_detect(scene, NoiseModel(pos_std=0.3, dim_std=0.1, yaw_std=0.1, seed=8))
        assert a != c

    def test_dropout_binomial(self):
        # keep probability is 1 - dropout; binomial oracle over 10^4 seeds
        gts = [gt_vehicle(10.0 + 8 * k) for k in range(5)]
        scene = tiny_scene(gts)
        dropout = 0.7
        trials = 10_000
        kept = sum(
            len(oracle_detect(scene, NoiseModel(dropout_prob=dropout, seed=s)))
            for s in range(trials)
        )
        n = trials * len(gts)
        p = 1.0 - dropout
        std = math.sqrt(n * p * (1 - p))
        assert abs(kept - n * p) < 4 * std

    def test_position_noise_folded_mean(self):
        # per-axis E|err| = std * sqrt(2/pi); 3D mean norm = 2 std sqrt(2/pi)
        scene = tiny_scene([gt_vehicle(10.0)])
        std = 0.1
        errs = np.array([
            np.asarray(oracle_detect(scene, NoiseModel(pos_std=std, seed=s))[0].box.center)
            - np.asarray(scene.ground_truth[0].box.center)
            for s in range(10_000)
        ])
        per_axis = np.abs(errs).mean(axis=0)
        np.testing.assert_allclose(per_axis, std * math.sqrt(2 / math.pi), rtol=0.05)
        mean_norm = np.linalg.norm(errs, axis=1).mean()
        assert mean_norm == pytest.approx(2 * std * math.sqrt(2 / math.pi), rel=0.05)

    def test_temperature_raises_entropy(self):
        scene = tiny_scene([gt_vehicle(10.0)])
        h = [
            shannon_entropy(oracle_detect(scene, NoiseModel(class_temperature=t))[0].class_dist)
            for t in (0.25, 1.0, 4.0)
        ]
        assert h[0] < h[1] < h[2]

    def test_support_points_inside_box(self, rng):
        pts = np.column_stack([rng.uniform(0, 20, (500, 3)), np.ones(500)])
        scene = tiny_scene([gt_vehicle(10.0, y=5.0)], cloud_points=pts)
        det = oracle_detect(scene, NoiseModel())[0]
        mask = points_in_box(scene.cloud.xyz, scene.ground_truth[0].box, 0.1)
        assert set(det.support_points) == set(np.nonzero(mask)[0])


def sample_box_surface_grid(box: OrientedBox, step=0.1):
    """Deterministic full-surface sample of a box (all six faces)."""
    l, w, h = box.length, box.width, box.height
    us = np.arange(-0.5, 0.5 + 1e-9, step)
    pts = []
    for a in us:
        for b in us:
            pts.append((0.5 * l, a * w, b * h))
            pts.append((-0.5 * l, a * w, b * h))
            pts.append((a * l, 0.5 * w, b * h))
            pts.append((a * l, -0.5 * w, b * h))
            pts.append((a * l, b * w, 0.5 * h))
            pts.append((a * l, b * w, -0.5 * h))
    pts = np.asarray(pts)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    return pts @ rot.T + np.asarray(box.center)


class TestGeometricDetect:
    PARAMS = ClusterParams(ground_z_max=0.2, neighbor_radius=0.5, min_points=5)

    def test_two_blobs_two_clusters(self, rng):
        a = rng.normal((0, 0, 1), 0.1, (50, 3))
        b = rng.normal((10, 0, 1), 0.1, (50, 3))
        pts = np.vstack([a, b])
        scene = tiny_scene([], cloud_points=np.column_stack([pts, np.ones(100)]))
        dets = geometric_detect(scene, self.PARAMS)
        assert len(dets) == 2

    def test_box_surface_fit(self):
        box = OrientedBox((8.0, 0.0, 1.0), 4.0, 2.0, 1.5, 0.0)
        pts = sample_box_surface_grid(box)
        scene = tiny_scene([], cloud_points=np.column_stack([pts, np.ones(len(pts))]))
        dets = geometric_detect(scene, self.PARAMS)
        assert len(dets) == 1
        fit = dets[0].box
        assert fit.length == pytest.approx(4.0, rel=0.1)
        assert fit.width == pytest.approx(2.0, rel=0.1)
        assert fit.height == pytest.approx(1.5, rel=0.1)
        # yaw within 5 degrees of 0 mod pi
        yaw_mod = min(abs(fit.yaw) % math.pi, math.pi - abs(fit.yaw) % math.pi)
        assert yaw_mod < math.radians(5)

    def test_min_points_threshold(self):
        pts = np.array([[5.0, 0.0, 1.0, 1.0]])
        scene = tiny_scene([], cloud_points=pts)
        assert geometric_detect(scene, ClusterParams(min_points=2)) == []

    def test_ground_removed(self, rng):
        ground = np.column_stack([rng.uniform(0, 20, (300, 2)),
                                  rng.uniform(0, 0.05, 300), np.ones(300)])
        scene = tiny_scene([], cloud_points=ground)
        assert geometric_detect(scene, self.PARAMS) == []

    def test_point_order_invariance(self, rng):
        box = OrientedBox((8.0, 2.0, 1.0), 4.0, 2.0, 1.5, 0.4)
        pts = sample_box_surface_grid(box)
        data = np.column_stack([pts, np.ones(len(pts))])
        scene_a = tiny_scene([], cloud_points=data)
        scene_b = tiny_scene([], cloud_points=data[rng.permutation(len(data))])
        da = geometric_detect(scene_a, self.PARAMS)
        db = geometric_detect(scene_b, self.PARAMS)
        assert len(da) == len(db) == 1
        np.testing.assert_allclose(da[0].box.params(), db[0].box.params(), atol=1e-9)
        assert da[0].class_dist == db[0].class_dist
        # same evidence points, as coordinates
        pa = np.sort(scene_a.cloud.xyz[list(da[0].support_points)], axis=0)
        pb = np.sort(scene_b.cloud.xyz[list(db[0].support_points)], axis=0)
        np.testing.assert_allclose(pa, pb, atol=0)

    def test_support_within_inflated_fit(self, rng):
        box = OrientedBox((10.0, -3.0, 1.2), 3.0, 1.5, 1.8, 0.9)
        pts = sample_box_surface_grid(box)
        data = np.column_stack([pts, np.ones(len(pts))])
        scene = tiny_scene([], cloud_points=data)
        det = geometric_detect(scene, self.PARAMS)[0]
        support = scene.cloud.xyz[list(det.support_points)]
        inside = points_in_box(support, det.box, self.PARAMS.neighbor_radius)
        assert inside.all()

    def test_class_heuristic(self, rng):
        # pedestrian-sized blob
        ped = rng.normal((5, 0, 0.9), (0.1, 0.1, 0.4), (60, 3))
        scene = tiny_scene([], cloud_points=np.column_stack([ped, np.ones(60)]))
        det = geometric_detect(scene, self.PARAMS)[0]
        assert det.class_dist.top_class is ObjectClass.PEDESTRIAN
        assert max(det.class_dist.probs) == pytest.approx(0.7)


class TestRegressionError:
    def test_identity(self):
        boxes = [OrientedBox((1, 2, 3), 4, 2, 1.5, 0.5)]
        assert box_regression_error(boxes, boxes, [(0, 0)]) == 0.0

    def test_unit_offset(self):
        a = [OrientedBox((1, 0, 0), 1, 1, 1, 0.0)]
        b = [OrientedBox((0, 0, 0), 1, 1, 1, 0.0)]
        assert box_regression_error(a, b, [(0, 0)]) == pytest.approx(1.0)

    def test_yaw_wrap(self):
        a = [OrientedBox((0, 0, 0), 1, 1, 1, 3.0)]
        b = [OrientedBox((0, 0, 0), 1, 1, 1, -3.0)]
        expected = (2 * math.pi - 6.0) ** 2  # 0.08019391820239662
        assert box_regression_error(a, b, [(0, 0)]) == pytest.approx(expected, abs=1e-12)

    def test_empty_matching(self):
        assert box_regression_error([], [], []) is None

    def test_rigid_transform_invariant(self, rng):
        from conftest import random_box

        pred = [random_box(rng) for _ in range(5)]
        gt = [random_box(rng) for _ in range(5)]
        matching = [(i, i) for i in range(5)]
        base = box_regression_error(pred, gt, matching)
        angle, shift = 0.7, np.array([3.0, -2.0, 1.0])
        c, s = math.cos(angle), math.sin(angle)

        def move(box):
            x, y, z = box.center
            return OrientedBox(
                (c * x - s * y + shift[0], s * x + c * y + shift[1], z + shift[2]),
                box.length, box.width, box.height, box.yaw + angle)

        moved = box_regression_error([move(b) for b in pred], [move(b) for b in gt],
                                     matching)
        assert moved == pytest.approx(base, rel=1e-9)


class TestMatching:
    def test_greedy_by_iou(self):
        gt = [OrientedBox((0, 0, 0), 2, 2, 2, 0.0), OrientedBox((10, 0, 0), 2, 2, 2, 0.0)]
        pred = [OrientedBox((0.1, 0, 0), 2, 2, 2, 0.0), OrientedBox((10.5, 0, 0), 2, 2, 2, 0.0),
                OrientedBox((50, 0, 0), 2, 2, 2, 0.0)]
        matches = match_boxes(pred, gt)
        assert [(m[0], m[1]) for m in matches] == [(0, 0), (1, 1)]
        assert matches[0][2] > matches[1][2]

    def test_threshold(self):
        gt = [OrientedBox((0, 0, 0), 1, 1, 1, 0.0)]
        pred = [OrientedBox((0.99, 0, 0), 1, 1, 1, 0.0)]  # sliver of overlap
        assert match_boxes(pred, gt, iou_threshold=0.1) == []
