"""Pluggable object detection over scenes.

Two ports stand in for a trained neural detector at desk scale:

* :func:`oracle_detect` perturbs ground truth with configurable Gaussian
  noise, class-temperature smoothing and dropout.  Deterministic for a
  given seed (NumPy PCG64 via ``default_rng``).
* :func:`geometric_detect` is a classical baseline: ground removal,
  fixed-radius euclidean clustering on a uniform grid hash, PCA-oriented
  box fits, and a dimension-based class heuristic.

Both return TrackedObjects whose support points index into the scene cloud.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .scene import (
    ClassDistribution,
    ObjectClass,
    OrientedBox,
    Scene,
    TrackedObject,
    wrap_angle,
)

# margin (meters) around a ground-truth box when collecting support points;
# covers surface-sampling sensor noise
SUPPORT_MARGIN = 0.1
MIN_EXTENT = 0.01


class DetectorPort(Protocol):
    """Anything that turns a Scene into tracked objects."""

    def detect(self, scene: Scene) -> list[TrackedObject]: ...


@dataclass(frozen=True)
class NoiseModel:
    """Error model for the ground-truth oracle detector."""

    pos_std: float = 0.0
    dim_std: float = 0.0
    yaw_std: float = 0.0
    class_temperature: float = 1e-9
    dropout_prob: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.pos_std, self.dim_std, self.yaw_std) < 0:
            raise ValueError("noise stds must be >= 0")
        if self.class_temperature <= 0:
            raise ValueError("class_temperature must be > 0")
        if not (0.0 <= self.dropout_prob < 1.0):
            raise ValueError("dropout_prob must lie in [0, 1)")


@dataclass(frozen=True)
class ClusterParams:
    """Geometric detector parameters."""

    ground_z_max: float = 0.3
    neighbor_radius: float = 0.7
    min_points: int = 10

    def __post_init__(self) -> None:
        if self.neighbor_radius <= 0:
            raise ValueError("neighbor_radius must be > 0")
        if self.min_points < 1:
            raise ValueError("min_points must be >= 1")


def smoothed_class_dist(label: ObjectClass, temperature: float) -> ClassDistribution:
    """One-hot label smoothed by softmax temperature.

    Temperature near zero recovers the one-hot; larger temperatures raise
    entropy toward uniform.
    """
    logits = np.zeros(4)
    logits[label.index] = 1.0
    z = (logits - logits.max()) / temperature
    p = np.exp(z)
    return ClassDistribution.from_array(p / p.sum())


def points_in_box(xyz: np.ndarray, box: OrientedBox, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of points inside the (optionally inflated) box."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rel = xyz - np.asarray(box.center)
    local_x = rel[:, 0] * c + rel[:, 1] * s
    local_y = -rel[:, 0] * s + rel[:, 1] * c
    return (
        (np.abs(local_x) <= box.length / 2.0 + margin)
        & (np.abs(local_y) <= box.width / 2.0 + margin)
        & (np.abs(rel[:, 2]) <= box.height / 2.0 + margin)
    )


def oracle_detect(scene: Scene, noise: NoiseModel) -> list[TrackedObject]:
    """Detect by perturbing ground truth with the configured noise model.

    One detection per non-dropped ground-truth object, in ground-truth
    order.  Box center/dims/yaw receive zero-mean Gaussian noise (dims
    clamped positive); the class distribution is the temperature-smoothed
    one-hot label; velocity is passed through.  Bit-reproducible for a
    given seed.

    Raises:
        ValueError: if the scene has no ground truth.
    """
    if scene.ground_truth is None:
        raise ValueError("oracle_detect requires scene.ground_truth")
    rng = np.random.default_rng(noise.seed)
    xyz = scene.cloud.xyz
    detections: list[TrackedObject] = []
    for gt in scene.ground_truth:
        # fixed draw order per object keeps the stream aligned across configs
        drop_u = rng.uniform()
        d_pos = rng.normal(0.0, 1.0, 3)
        d_dim = rng.normal(0.0, 1.0, 3)
        d_yaw = rng.normal(0.0, 1.0)
        if drop_u < noise.dropout_prob:
            continue
        b = gt.box
        center = tuple(np.asarray(b.center) + noise.pos_std * d_pos)
        dims = np.array([b.length, b.width, b.height]) + noise.dim_std * d_dim
        dims = np.maximum(dims, MIN_EXTENT)
        box = OrientedBox(center, float(dims[0]), float(dims[1]), float(dims[2]),
                          wrap_angle(b.yaw + noise.yaw_std * d_yaw))
        support = np.nonzero(points_in_box(xyz, gt.box, SUPPORT_MARGIN))[0]
        detections.append(
            TrackedObject(
                id=len(detections),
                box=box,
                velocity=gt.velocity,
                class_dist=smoothed_class_dist(gt.label, noise.class_temperature),
                support_points=tuple(int(i) for i in support),
            )
        )
    return detections


def _grid_clusters(xyz: np.ndarray, radius: float) -> list[np.ndarray]:
    """Fixed-radius connected components via a uniform grid spatial hash."""
    cell = radius
    keys = np.floor(xyz / cell).astype(np.int64)
    buckets: dict[tuple[int, int, int], list[int]] = {}
    for i, k in enumerate(map(tuple, keys)):
        buckets.setdefault(k, []).append(i)
    n = xyz.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    r2 = radius * radius
    next_label = 0
    offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
    for start in range(n):
        if labels[start] >= 0:
            continue
        labels[start] = next_label
        queue = deque([start])
        while queue:
            i = queue.popleft()
            kx, ky, kz = keys[i]
            p = xyz[i]
            for dx, dy, dz in offsets:
                for j in buckets.get((kx + dx, ky + dy, kz + dz), ()):
                    if labels[j] >= 0:
                        continue
                    d = xyz[j] - p
                    if d @ d <= r2:
                        labels[j] = next_label
                        queue.append(j)
        next_label += 1
    return [np.nonzero(labels == k)[0] for k in range(next_label)]


def _classify_cluster(length: float, width: float, height: float, z_std: float) -> ClassDistribution:
    """Dimension heuristic producing a dominant-class distribution.

    Dominant class gets 0.7 mass, the rest is spread evenly, so entropy is
    non-degenerate.
    """
    diagonal = math.hypot(length, width)
    if z_std < 0.05:
        dominant = ObjectClass.STATIC_OBSTACLE
    elif diagonal < 1.2 and height < 2.2:
        dominant = ObjectClass.PEDESTRIAN
    elif diagonal < 2.5:
        dominant = ObjectClass.CYCLIST
    else:
        dominant = ObjectClass.VEHICLE
    probs = [0.1, 0.1, 0.1, 0.1]
    probs[dominant.index] = 0.7
    return ClassDistribution(tuple(probs))


def _fit_box(points: np.ndarray) -> OrientedBox:
    """PCA-oriented box fit: yaw from the xy principal axis, extents from
    the rotated min/max bounds."""
    xy = points[:, :2]
    centered = xy - xy.mean(axis=0)
    cov = centered.T @ centered / max(len(xy), 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    principal = eigvecs[:, -1]  # largest eigenvalue last
    yaw = math.atan2(float(principal[1]), float(principal[0]))
    # pi-ambiguous; resolve toward +x (stationary clusters carry no velocity)
    if math.cos(yaw) < 0:
        yaw = wrap_angle(yaw + math.pi)
    elif abs(math.cos(yaw)) < 1e-12:
        yaw = math.pi / 2.0
    c, s = math.cos(yaw), math.sin(yaw)
    local_x = xy[:, 0] * c + xy[:, 1] * s
    local_y = -xy[:, 0] * s + xy[:, 1] * c
    lx0, lx1 = float(local_x.min()), float(local_x.max())
    ly0, ly1 = float(local_y.min()), float(local_y.max())
    z0, z1 = float(points[:, 2].min()), float(points[:, 2].max())
    mx, my = (lx0 + lx1) / 2.0, (ly0 + ly1) / 2.0
    center = (mx * c - my * s, mx * s + my * c, (z0 + z1) / 2.0)
    return OrientedBox(
        center,
        max(lx1 - lx0, MIN_EXTENT),
        max(ly1 - ly0, MIN_EXTENT),
        max(z1 - z0, MIN_EXTENT),
        yaw,
    )


def geometric_detect(scene: Scene, params: ClusterParams) -> list[TrackedObject]:
    """Cluster-and-fit baseline detector.

    Ground points (z <= ground_z_max) are removed, the rest are grouped by
    fixed-radius connected components, small clusters are discarded, and
    each surviving cluster is fitted with a yaw-oriented box.  Output is
    sorted by box center so results do not depend on point order.
    """
    xyz = scene.cloud.xyz
    above = np.nonzero(xyz[:, 2] > params.ground_z_max)[0]
    if above.size == 0:
        return []
    clusters = _grid_clusters(xyz[above], params.neighbor_radius)
    fits = []
    for idx in clusters:
        if idx.size < params.min_points:
            continue
        orig = above[idx]
        pts = xyz[orig]
        box = _fit_box(pts)
        cdist = _classify_cluster(box.length, box.width, box.height, float(pts[:, 2].std()))
        fits.append((box, cdist, orig))
    fits.sort(key=lambda f: f[0].center)
    return [
        TrackedObject(
            id=i,
            box=box,
            velocity=(0.0, 0.0, 0.0),
            class_dist=cdist,
            support_points=tuple(int(j) for j in np.sort(orig)),
        )
        for i, (box, cdist, orig) in enumerate(fits)
    ]


class OracleDetector:
    """DetectorPort adapter around :func:`oracle_detect`."""

    def __init__(self, noise: NoiseModel):
        self.noise = noise

    def detect(self, scene: Scene) -> list[TrackedObject]:
        return oracle_detect(scene, self.noise)


class GeometricDetector:
    """DetectorPort adapter around :func:`geometric_detect`."""

    def __init__(self, params: ClusterParams):
        self.params = params

    def detect(self, scene: Scene) -> list[TrackedObject]:
        return geometric_detect(scene, self.params)


def match_boxes(
    predicted: Sequence[OrientedBox],
    truth: Sequence[OrientedBox],
    iou_threshold: float = 0.1,
) -> list[tuple[int, int, float]]:
    """Greedy one-to-one matching by descending IoU.

    Returns (pred_index, truth_index, iou) triples; pairs below the
    threshold are never matched.  Ties break on indices so the matching is
    deterministic.
    """
    from .scene import box_iou

    pairs = []
    for i, p in enumerate(predicted):
        for j, t in enumerate(truth):
            iou = box_iou(p, t)
            if iou >= iou_threshold:
                pairs.append((iou, i, j))
    pairs.sort(key=lambda x: (-x[0], x[1], x[2]))
    used_p: set[int] = set()
    used_t: set[int] = set()
    matches = []
    for iou, i, j in pairs:
        if i in used_p or j in used_t:
            continue
        used_p.add(i)
        used_t.add(j)
        matches.append((i, j, iou))
    matches.sort(key=lambda m: m[0])
    return matches


def box_regression_error(
    predicted: Sequence[OrientedBox],
    truth: Sequence[OrientedBox],
    matching: Sequence[tuple[int, int]],
) -> float | None:
    """Mean squared parameter error over matched box pairs.

    Parameters are (x, y, z, l, w, h, yaw); the yaw difference is wrapped
    to (-pi, pi] before squaring.  Returns None for an empty matching.
    """
    if len(matching) == 0:
        return None
    total = 0.0
    for pi, ti in matching:
        d = predicted[pi].params() - truth[ti].params()
        d[6] = wrap_angle(float(d[6]))
        total += float(d @ d)
    return total / len(matching)
