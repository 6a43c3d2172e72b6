"""Suite evaluation and reporting.

A manifest lists generated scenes with their templates; each template
declares the decision the pipeline is expected to reach.  The harness runs
the full pipeline per scene, scores speed decisions with one-vs-rest
precision/recall/F1, path decisions with per-class accuracy, and detection
quality with IoU / matched fraction / entropy / deviation / box regression
error against ground truth.

Reports are byte-stable: a text table, a loss-free CSV (floats serialized
with ``repr`` so parsing them back reproduces the result exactly), and a
plot-data JSON.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from .config import PipelineConfig
from .detector import box_regression_error, match_boxes
from .interaction import BgnnModel
from .pipeline import run_scene
from .reasoner import PathDecision, SpeedDecision
from .risk import RiskTier
from .scenario import Template
from .scene_io import load_scene

SPEED_ORDER = [d.value for d in SpeedDecision]
PATH_ORDER = [d.value for d in PathDecision]

#: Decision each template is expected to produce (speed, path).
TEMPLATE_EXPECTED: dict[Template, tuple[SpeedDecision, PathDecision]] = {
    Template.EMPTY_ROAD: (SpeedDecision.SPEED_LIMIT, PathDecision.STRAIGHT),
    Template.LEAD_VEHICLE: (SpeedDecision.FOLLOW_AHEAD, PathDecision.STRAIGHT),
    Template.PEDESTRIAN_CROSSING: (SpeedDecision.BRAKE, PathDecision.STRAIGHT),
    Template.OCCLUDED_JUNCTION: (SpeedDecision.SLOW_APPROACH, PathDecision.STRAIGHT),
    Template.DENSE_TRAFFIC: (SpeedDecision.FOLLOW_AHEAD, PathDecision.STRAIGHT),
    Template.STATIC_VEHICLE_AHEAD: (SpeedDecision.SLOW_DOWN, PathDecision.LANE_CHANGE),
}


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class SuiteResult:
    speed_metrics: dict[str, ClassMetrics]
    speed_confusion: dict[str, dict[str, int]]  # expected -> predicted -> n
    path_accuracy: dict[str, float]
    mean_iou: Optional[float]
    detection_accuracy: Optional[float]
    mean_entropy: Optional[float]
    mean_deviation_deg: Optional[float]
    reg_error: Optional[float]
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def speed_accuracy(self) -> Optional[float]:
        total = sum(sum(row.values()) for row in self.speed_confusion.values())
        if total == 0:
            return None
        diag = sum(self.speed_confusion.get(c, {}).get(c, 0)
                   for c in self.speed_confusion)
        return diag / total


def f1_per_class(predictions: Sequence[str], labels: Sequence[str],
                 classes: Optional[Sequence[str]] = None) -> dict[str, ClassMetrics]:
    """One-vs-rest precision/recall/F1 per class.

    Classes with neither ground truth nor predictions are omitted.  Zero
    denominators yield 0 for the affected metric.

    Raises:
        ValueError: on length mismatch.
    """
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} vs {len(labels)}")
    if classes is None:
        seen = set(predictions) | set(labels)
        classes = [c for c in SPEED_ORDER if c in seen] + sorted(
            c for c in seen if c not in SPEED_ORDER)
    out = {}
    for cls in classes:
        tp = sum(1 for p, y in zip(predictions, labels) if p == cls and y == cls)
        fp = sum(1 for p, y in zip(predictions, labels) if p == cls and y != cls)
        fn = sum(1 for p, y in zip(predictions, labels) if p != cls and y == cls)
        if tp + fp + fn == 0:
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[cls] = ClassMetrics(precision, recall, f1)
    return out


@dataclass(frozen=True)
class SceneRecord:
    path: str
    template: str
    expected_speed: Optional[str] = None
    expected_path: Optional[str] = None
    predicted_speed: Optional[str] = None
    predicted_path: Optional[str] = None
    error: Optional[str] = None
    mean_iou: Optional[float] = None
    n_gt: int = 0
    n_detections: int = 0
    n_matched: int = 0
    sum_iou: float = 0.0
    sum_sq_reg: float = 0.0
    sum_entropy: float = 0.0
    sum_deviation: float = 0.0
    tier_counts: tuple[tuple[str, int], ...] = ()
    n_flagged: int = 0


def _evaluate_one(path: str, template: str, config: PipelineConfig,
                  model: Optional[BgnnModel], base: Path) -> SceneRecord:
    tpl = Template(template)
    expected_speed, expected_path = TEMPLATE_EXPECTED[tpl]
    try:
        scene = load_scene(base / path)
        result = run_scene(scene, config, model)
    except Exception as exc:  # per-scene failure must not kill the suite
        return SceneRecord(path=path, template=template,
                           expected_speed=expected_speed.value,
                           expected_path=expected_path.value,
                           error=f"{type(exc).__name__}: {exc}")
    n_gt = len(scene.ground_truth or ())
    n_matched = 0
    sum_iou = 0.0
    sum_sq = 0.0
    if scene.ground_truth:
        pred_boxes = [o.box for o in result.detections]
        gt_boxes = [g.box for g in scene.ground_truth]
        matches = match_boxes(pred_boxes, gt_boxes)
        n_matched = len(matches)
        sum_iou = sum(m[2] for m in matches)
        reg = box_regression_error(pred_boxes, gt_boxes, [(m[0], m[1]) for m in matches])
        if reg is not None:
            sum_sq = reg * n_matched
    tiers: dict[str, int] = {}
    for a in result.assessments:
        tiers[a.tier.value] = tiers.get(a.tier.value, 0) + 1
    return SceneRecord(
        path=path,
        template=template,
        expected_speed=expected_speed.value,
        expected_path=expected_path.value,
        predicted_speed=result.trace.speed.value,
        predicted_path=result.trace.path.value,
        n_gt=n_gt,
        n_detections=len(result.detections),
        n_matched=n_matched,
        sum_iou=sum_iou,
        sum_sq_reg=sum_sq,
        sum_entropy=sum(a.entropy for a in result.assessments),
        sum_deviation=sum(a.deviation for a in result.assessments),
        tier_counts=tuple(sorted(tiers.items())),
        n_flagged=sum(1 for a in result.assessments if a.flagged),
    )


def evaluate_suite(
    manifest_path: str | Path,
    config: PipelineConfig,
    jobs: int = 1,
    model: Optional[BgnnModel] = None,
) -> tuple[SuiteResult, list[SceneRecord]]:
    """Evaluate every scene in the manifest.

    Unreadable or failing scenes are recorded with their error and skipped
    from the metrics; aggregation runs in a canonical order (sorted by
    scene path) so the result does not depend on manifest ordering or the
    number of workers.
    """
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    entries = [(e["path"], e["template"]) for e in manifest["scenes"]]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(
                lambda it: _evaluate_one(it[0], it[1], config, model, base), entries))
    else:
        records = [_evaluate_one(p, t, config, model, base) for p, t in entries]
    records = sorted(records, key=lambda r: r.path)
    return _aggregate(records), records


def _aggregate(records: Sequence[SceneRecord]) -> SuiteResult:
    ok = [r for r in records if r.error is None]
    preds = [r.predicted_speed for r in ok]
    labels = [r.expected_speed for r in ok]
    confusion: dict[str, dict[str, int]] = {}
    for r in ok:
        row = confusion.setdefault(r.expected_speed, {})
        row[r.predicted_speed] = row.get(r.predicted_speed, 0) + 1
    path_hits: dict[str, list[int]] = {}
    for r in ok:
        path_hits.setdefault(r.expected_path, []).append(
            1 if r.predicted_path == r.expected_path else 0)
    path_accuracy = {
        k: sum(v) / len(v) for k, v in sorted(path_hits.items())
    }
    n_gt = sum(r.n_gt for r in ok)
    n_det = sum(r.n_detections for r in ok)
    n_matched = sum(r.n_matched for r in ok)
    sum_iou = sum(r.sum_iou for r in ok)
    sum_sq = sum(r.sum_sq_reg for r in ok)
    sum_entropy = sum(r.sum_entropy for r in ok)
    sum_dev = sum(r.sum_deviation for r in ok)
    counts: dict[str, int] = {
        "scenes": len(records),
        "errors": len(records) - len(ok),
        "gt_objects": n_gt,
        "detections": n_det,
        "matched": n_matched,
        "flagged": sum(r.n_flagged for r in ok),
    }
    for tier in RiskTier:
        counts[f"tier_{tier.value}"] = sum(
            dict(r.tier_counts).get(tier.value, 0) for r in ok)
    return SuiteResult(
        speed_metrics=f1_per_class(preds, labels) if ok else {},
        speed_confusion=confusion,
        path_accuracy=path_accuracy,
        mean_iou=sum_iou / n_matched if n_matched else None,
        detection_accuracy=n_matched / n_gt if n_gt else None,
        mean_entropy=sum_entropy / n_det if n_det else None,
        mean_deviation_deg=math.degrees(sum_dev / n_det) if n_det else None,
        reg_error=sum_sq / n_matched if n_matched else None,
        counts=counts,
    )


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


def _fmt(v: Optional[float]) -> str:
    return "-" if v is None else f"{v:.4f}"


def render_text(result: SuiteResult) -> str:
    lines = ["Speed decisions (one-vs-rest)"]
    lines.append(f"  {'class':<14} {'precision':>9} {'recall':>9} {'f1':>9}")
    for cls in SPEED_ORDER:
        if cls in result.speed_metrics:
            m = result.speed_metrics[cls]
            lines.append(f"  {cls:<14} {m.precision:>9.4f} {m.recall:>9.4f} {m.f1:>9.4f}")
    lines.append("Path accuracy")
    for cls in PATH_ORDER:
        if cls in result.path_accuracy:
            lines.append(f"  {cls:<14} {100.0 * result.path_accuracy[cls]:>8.2f}%")
    lines.append("Detection")
    lines.append(f"  mean IoU            {_fmt(result.mean_iou)}")
    lines.append(f"  detection accuracy  {_fmt(result.detection_accuracy)}")
    lines.append(f"  mean entropy (nats) {_fmt(result.mean_entropy)}")
    lines.append(f"  mean deviation (deg) {_fmt(result.mean_deviation_deg)}")
    lines.append(f"  box regression error {_fmt(result.reg_error)}")
    lines.append("Counts")
    for k in sorted(result.counts):
        lines.append(f"  {k:<14} {result.counts[k]}")
    return "\n".join(lines) + "\n"


def _csv_value(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_csv(result: SuiteResult) -> str:
    rows = ["section,key,value"]
    for cls in sorted(result.speed_metrics):
        m = result.speed_metrics[cls]
        rows.append(f"speed_precision,{cls},{_csv_value(m.precision)}")
        rows.append(f"speed_recall,{cls},{_csv_value(m.recall)}")
        rows.append(f"speed_f1,{cls},{_csv_value(m.f1)}")
    for exp in sorted(result.speed_confusion):
        for pred in sorted(result.speed_confusion[exp]):
            rows.append(f"speed_confusion,{exp}|{pred},{result.speed_confusion[exp][pred]}")
    for cls in sorted(result.path_accuracy):
        rows.append(f"path_accuracy,{cls},{_csv_value(result.path_accuracy[cls])}")
    for key in ("mean_iou", "detection_accuracy", "mean_entropy",
                "mean_deviation_deg", "reg_error"):
        rows.append(f"scalar,{key},{_csv_value(getattr(result, key))}")
    for k in sorted(result.counts):
        rows.append(f"count,{k},{result.counts[k]}")
    return "\n".join(rows) + "\n"


def parse_csv(text: str) -> SuiteResult:
    """Inverse of :func:`render_csv`; the round-trip is lossless."""
    speed: dict[str, dict[str, float]] = {}
    confusion: dict[str, dict[str, int]] = {}
    path_accuracy: dict[str, float] = {}
    scalars: dict[str, Optional[float]] = {}
    counts: dict[str, int] = {}
    lines = [ln for ln in text.splitlines() if ln]
    for line in lines[1:]:
        section, key, value = line.split(",", 2)
        if section.startswith("speed_") and section != "speed_confusion":
            speed.setdefault(key, {})[section.removeprefix("speed_")] = float(value)
        elif section == "speed_confusion":
            exp, pred = key.split("|", 1)
            confusion.setdefault(exp, {})[pred] = int(value)
        elif section == "path_accuracy":
            path_accuracy[key] = float(value)
        elif section == "scalar":
            scalars[key] = float(value) if value else None
        elif section == "count":
            counts[key] = int(value)
        else:
            raise ValueError(f"unknown CSV section {section!r}")
    metrics = {
        cls: ClassMetrics(d["precision"], d["recall"], d["f1"])
        for cls, d in speed.items()
    }
    return SuiteResult(
        speed_metrics=metrics,
        speed_confusion=confusion,
        path_accuracy=path_accuracy,
        mean_iou=scalars.get("mean_iou"),
        detection_accuracy=scalars.get("detection_accuracy"),
        mean_entropy=scalars.get("mean_entropy"),
        mean_deviation_deg=scalars.get("mean_deviation_deg"),
        reg_error=scalars.get("reg_error"),
        counts=counts,
    )


def render_plot_json(result: SuiteResult) -> str:
    payload = {
        "speed_f1": {c: result.speed_metrics[c].f1 for c in sorted(result.speed_metrics)},
        "path_accuracy": dict(sorted(result.path_accuracy.items())),
        "risk_histogram": {
            tier.value: result.counts.get(f"tier_{tier.value}", 0) for tier in RiskTier
        },
        "flagged": result.counts.get("flagged", 0),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_report(result: SuiteResult, out_dir: str | Path,
                 prefix: str = "report") -> list[Path]:
    """Write text, CSV and plot-JSON reports; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{prefix}.txt", out / f"{prefix}.csv", out / f"{prefix}_plot.json"]
    paths[0].write_text(render_text(result))
    paths[1].write_text(render_csv(result))
    paths[2].write_text(render_plot_json(result))
    return paths


def result_to_dict(result: SuiteResult) -> dict[str, Any]:
    return {
        "speed_metrics": {
            c: {"precision": m.precision, "recall": m.recall, "f1": m.f1}
            for c, m in sorted(result.speed_metrics.items())
        },
        "speed_confusion": {k: dict(sorted(v.items()))
                            for k, v in sorted(result.speed_confusion.items())},
        "path_accuracy": dict(sorted(result.path_accuracy.items())),
        "mean_iou": result.mean_iou,
        "detection_accuracy": result.detection_accuracy,
        "mean_entropy": result.mean_entropy,
        "mean_deviation_deg": result.mean_deviation_deg,
        "reg_error": result.reg_error,
        "counts": dict(sorted(result.counts.items())),
    }
