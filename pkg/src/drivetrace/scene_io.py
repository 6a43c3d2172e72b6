"""Scene and point-cloud file formats.

Scene files are JSON with top-level keys ``timestamp``, ``ego``,
``objects``, ``ground_truth`` and ``cloud_file`` (path to the point cloud,
relative to the scene file).  Point clouds come in two flavors:

* ASCII: one point per line, ``x y z intensity`` whitespace-separated,
  ``#``-prefixed comment lines allowed.
* Binary: 16-byte header (8-byte magic ``PCBIN001`` + uint64 little-endian
  point count) followed by 4 float32 little-endian values per point.

Writers are byte-deterministic: identical inputs produce identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .scene import (
    ClassDistribution,
    EgoState,
    GroundTruthObject,
    Intent,
    ObjectClass,
    OrientedBox,
    PointCloud,
    Scene,
    TrackedObject,
)

CLOUD_MAGIC = b"PCBIN001"


def write_cloud_ascii(cloud: PointCloud, path: str | Path) -> None:
    lines = [f"# point cloud frame={cloud.frame_id} count={len(cloud)}"]
    for row in cloud.data:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_cloud_binary(cloud: PointCloud, path: str | Path) -> None:
    header = CLOUD_MAGIC + struct.pack("<Q", len(cloud))
    body = cloud.data.astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_cloud(path: str | Path, frame_id: str = "ego") -> PointCloud:
    """Read either cloud format; binary is detected by its magic string."""
    raw = Path(path).read_bytes()
    if raw[: len(CLOUD_MAGIC)] == CLOUD_MAGIC:
        (count,) = struct.unpack("<Q", raw[8:16])
        data = np.frombuffer(raw, dtype="<f4", offset=16, count=count * 4)
        return PointCloud(data.reshape(count, 4).astype(np.float64), frame_id)
    rows = []
    for line in raw.decode("utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"bad point line in {path}: {line!r}")
        rows.append([float(v) for v in parts])
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 4), frame_id)


def _box_to_dict(box: OrientedBox) -> dict[str, Any]:
    return {
        "center": list(box.center),
        "length": box.length,
        "width": box.width,
        "height": box.height,
        "yaw": box.yaw,
    }


def _box_from_dict(d: dict[str, Any]) -> OrientedBox:
    return OrientedBox(tuple(d["center"]), d["length"], d["width"], d["height"], d["yaw"])


def scene_to_dict(scene: Scene, cloud_file: str) -> dict[str, Any]:
    d: dict[str, Any] = {
        "timestamp": scene.timestamp,
        "ego": {
            "position": list(scene.ego.position),
            "heading": scene.ego.heading,
            "speed": scene.ego.speed,
            "lane_heading": scene.ego.lane_heading,
            "intent": scene.ego.intent.value,
        },
        "objects": [
            {
                "id": o.id,
                "box": _box_to_dict(o.box),
                "velocity": list(o.velocity),
                "class_probs": list(o.class_dist.probs),
                "support_points": list(o.support_points),
            }
            for o in scene.objects
        ],
        "ground_truth": None,
        "cloud_file": cloud_file,
    }
    if scene.ground_truth is not None:
        d["ground_truth"] = [
            {
                "box": _box_to_dict(g.box),
                "class": g.label.value,
                "velocity": list(g.velocity),
            }
            for g in scene.ground_truth
        ]
    return d


def scene_from_dict(d: dict[str, Any], cloud: PointCloud) -> Scene:
    ego = d["ego"]
    gt = None
    if d.get("ground_truth") is not None:
        gt = tuple(
            GroundTruthObject(_box_from_dict(g["box"]), ObjectClass(g["class"]),
                              tuple(g["velocity"]))
            for g in d["ground_truth"]
        )
    return Scene(
        timestamp=d["timestamp"],
        ego=EgoState(
            heading=ego["heading"],
            speed=ego["speed"],
            lane_heading=ego["lane_heading"],
            intent=Intent(ego["intent"]),
            position=tuple(ego.get("position", (0.0, 0.0, 0.0))),
        ),
        cloud=cloud,
        objects=tuple(
            TrackedObject(
                id=o["id"],
                box=_box_from_dict(o["box"]),
                velocity=tuple(o["velocity"]),
                class_dist=ClassDistribution(tuple(o["class_probs"])),
                support_points=tuple(o["support_points"]),
            )
            for o in d["objects"]
        ),
        ground_truth=gt,
    )


def save_scene(scene: Scene, scene_path: str | Path, cloud_format: str = "ascii") -> None:
    """Write scene JSON plus its point-cloud file next to it."""
    scene_path = Path(scene_path)
    cloud_name = scene_path.stem + (".pts" if cloud_format == "ascii" else ".pcb")
    if cloud_format == "ascii":
        write_cloud_ascii(scene.cloud, scene_path.parent / cloud_name)
    elif cloud_format == "binary":
        write_cloud_binary(scene.cloud, scene_path.parent / cloud_name)
    else:
        raise ValueError(f"unknown cloud format {cloud_format!r}")
    payload = scene_to_dict(scene, cloud_name)
    scene_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_scene(scene_path: str | Path) -> Scene:
    scene_path = Path(scene_path)
    d = json.loads(scene_path.read_text())
    cloud = read_cloud(scene_path.parent / d["cloud_file"])
    return scene_from_dict(d, cloud)
