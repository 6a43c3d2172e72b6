"""LiDAR voxelization/normalization and image preprocessing.

The LiDAR path: points are binned into a regular voxel grid (cell index
``floor(coord / size)`` per axis) and each occupied cell is summarized by
the arithmetic-mean centroid and mean intensity of its members.  Intensity
values are min-max normalized with clamping; coordinates are scaled by a
maximum range, with out-of-range points dropped rather than clamped so the
geometry feeding distance-based risk stays undistorted.

The image path operates on small RGB tensors read from PPM (P6) files,
resized with half-pixel-center bilinear interpolation and normalized with
fixed per-channel mean/std.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene import PointCloud

#: Per-channel normalization statistics for the RGB path.
IMAGE_MEAN = (0.485, 0.456, 0.406)
IMAGE_STD = (0.229, 0.224, 0.225)
IMAGE_TARGET = (224, 224)


class ConfigError(ValueError):
    """Invalid preprocessing configuration."""


@dataclass(frozen=True)
class NormalizationConfig:
    """Intensity clamp thresholds and maximum coordinate range."""

    intensity_min: float = 0.0
    intensity_max: float = 255.0
    range_max: float = 100.0

    def __post_init__(self) -> None:
        if not self.intensity_max > self.intensity_min:
            raise ConfigError("intensity_max must exceed intensity_min")
        if not self.range_max > 0:
            raise ConfigError("range_max must be > 0")


@dataclass(frozen=True)
class VoxelCell:
    centroid: tuple[float, float, float]
    mean_intensity: float
    count: int


@dataclass(frozen=True)
class VoxelGrid:
    voxel_size: tuple[float, float, float]
    cells: dict[tuple[int, int, int], VoxelCell]

    @property
    def total_count(self) -> int:
        return sum(c.count for c in self.cells.values())


def voxelize(cloud: PointCloud, size: tuple[float, float, float] = (0.2, 0.2, 0.2)) -> VoxelGrid:
    """Bin a cloud into voxels of the given (dx, dy, dz) size.

    Each occupied cell carries the arithmetic mean of its member
    coordinates (the centroid) and intensities.  The summed cell counts
    always equal the input point count, and results are independent of
    point order.
    """
    if any(s <= 0 for s in size):
        raise ConfigError(f"voxel size components must be > 0, got {size}")
    if len(cloud) == 0:
        return VoxelGrid(tuple(size), {})
    idx = np.floor(cloud.xyz / np.asarray(size)).astype(np.int64)
    # group rows by cell via lexicographic sort
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
    sidx = idx[order]
    sdata = cloud.data[order]
    boundaries = np.nonzero(np.any(np.diff(sidx, axis=0) != 0, axis=1))[0] + 1
    cells: dict[tuple[int, int, int], VoxelCell] = {}
    for chunk_idx, chunk in zip(
        np.split(sidx, boundaries), np.split(sdata, boundaries)
    ):
        key = tuple(int(v) for v in chunk_idx[0])
        mean = chunk.mean(axis=0)
        cells[key] = VoxelCell(
            centroid=(float(mean[0]), float(mean[1]), float(mean[2])),
            mean_intensity=float(mean[3]),
            count=int(chunk.shape[0]),
        )
    return VoxelGrid(tuple(size), cells)


def normalize_intensity(value: float, cfg: NormalizationConfig) -> float:
    """Min-max normalize an intensity to [0, 1], clamping out-of-range values."""
    t = (value - cfg.intensity_min) / (cfg.intensity_max - cfg.intensity_min)
    return min(1.0, max(0.0, t))


def normalize_coords(cloud: PointCloud, range_max: float) -> np.ndarray:
    """Scale coordinates into the unit range by dividing by ``range_max``.

    Points farther than ``range_max`` from the origin are dropped (clamping
    would bend their direction).  Returns an (M, 3) array, M <= N.
    """
    if range_max <= 0:
        raise ConfigError(f"range_max must be > 0, got {range_max}")
    xyz = cloud.xyz
    keep = np.linalg.norm(xyz, axis=1) <= range_max
    return xyz[keep] / range_max


@dataclass(frozen=True)
class ImageTensor:
    """RGB image with values in [0, 1] (before mean/std normalization)."""

    values: np.ndarray  # (H, W, 3) float64

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"image must be (H, W, 3) with positive dims, got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def read_ppm(path: str | Path) -> ImageTensor:
    """Read a binary PPM (P6, maxval 255) into an ImageTensor in [0, 1]."""
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"not a P6 PPM file: {path}")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=pos, count=width * height * 3)
    return ImageTensor(pixels.reshape(height, width, 3).astype(np.float64) / 255.0)


def write_ppm(img: ImageTensor, path: str | Path) -> None:
    data = np.clip(np.round(img.values * 255.0), 0, 255).astype(np.uint8)
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def _bilinear_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel-center alignment."""
    in_h, in_w = values.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return values.copy()
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.clip(y0 + 1, 0, in_h - 1)
    x1 = np.clip(x0 + 1, 0, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = values[y0][:, x0] * (1 - wx) + values[y0][:, x1] * wx
    bot = values[y1][:, x0] * (1 - wx) + values[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def image_resize_normalize(
    img: ImageTensor,
    target: tuple[int, int] = IMAGE_TARGET,
    mean: tuple[float, float, float] = IMAGE_MEAN,
    std: tuple[float, float, float] = IMAGE_STD,
) -> ImageTensor:
    """Resize to ``target`` (height, width) bilinearly, then normalize each
    channel to (value - mean) / std.

    The result is no longer confined to [0, 1]; it is the standardized
    tensor a downstream encoder would consume.
    """
    if any(s <= 0 for s in std):
        raise ConfigError(f"std components must be > 0, got {std}")
    if any(t <= 0 for t in target):
        raise ValueError(f"target dims must be > 0, got {target}")
    resized = _bilinear_resize(img.values, target[0], target[1])
    return ImageTensor((resized - np.asarray(mean)) / np.asarray(std))


def resize_image(img: ImageTensor, target: tuple[int, int]) -> ImageTensor:
    """Bilinear resize only (values stay in [0, 1])."""
    return ImageTensor(_bilinear_resize(img.values, target[0], target[1]))
