"""Metric computation, suite evaluation, and report round-trips."""

import json

import pytest

from drivetrace.cli import main
from drivetrace.config import PipelineConfig
from drivetrace.evaluate import (
    ClassMetrics,
    SuiteResult,
    evaluate_suite,
    f1_per_class,
    parse_csv,
    render_csv,
    render_plot_json,
    render_text,
    write_report,
)


class TestF1:
    def test_perfect(self):
        m = f1_per_class(["Brake", "SlowDown"], ["Brake", "SlowDown"])
        assert m["Brake"] == ClassMetrics(1.0, 1.0, 1.0)
        assert m["SlowDown"] == ClassMetrics(1.0, 1.0, 1.0)

    def test_all_wrong(self):
        m = f1_per_class(["Brake"] * 4, ["SlowDown"] * 4)
        assert m["SlowDown"].f1 == 0.0
        assert m["Brake"].f1 == 0.0

    def test_hand_computed_confusion(self):
        # TP = 8, FP = 2, FN = 4 for class A
        preds = ["A"] * 8 + ["A"] * 2 + ["B"] * 4
        labels = ["A"] * 8 + ["B"] * 2 + ["A"] * 4
        m = f1_per_class(preds, labels, classes=["A"])
        assert m["A"].precision == pytest.approx(0.8)
        assert m["A"].recall == pytest.approx(2.0 / 3.0)
        assert m["A"].f1 == pytest.approx(8.0 / 11.0)  # 0.72727...

    def test_absent_class_omitted(self):
        m = f1_per_class(["A"], ["A"], classes=["A", "Z"])
        assert "Z" not in m

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            f1_per_class(["A"], ["A", "B"])


def small_result() -> SuiteResult:
    return SuiteResult(
        speed_metrics={"Brake": ClassMetrics(1.0, 0.95, 2 * 0.95 / 1.95),
                       "SpeedLimit": ClassMetrics(0.9, 1.0, 2 * 0.9 / 1.9)},
        speed_confusion={"Brake": {"Brake": 19, "SpeedLimit": 1},
                         "SpeedLimit": {"SpeedLimit": 18}},
        path_accuracy={"Straight": 1.0, "LaneChange": 0.9},
        mean_iou=0.8123456789012345,
        detection_accuracy=0.97,
        mean_entropy=0.4321,
        mean_deviation_deg=3.7,
        reg_error=None,
        counts={"scenes": 38, "errors": 0, "tier_High": 19, "tier_Moderate": 0,
                "tier_Low": 19, "flagged": 0},
    )


class TestReports:
    def test_csv_round_trip_exact(self):
        result = small_result()
        back = parse_csv(render_csv(result))
        assert back == result

    def test_csv_deterministic(self):
        assert render_csv(small_result()) == render_csv(small_result())

    def test_micro_accuracy_from_confusion(self):
        result = small_result()
        total = 19 + 1 + 18
        assert result.speed_accuracy == pytest.approx((19 + 18) / total)

    def test_text_table_order(self):
        text = render_text(small_result())
        # canonical decision order: SpeedLimit before Brake
        assert text.index("SpeedLimit") < text.index("Brake")
        assert "mean IoU" in text and "0.8123" in text

    def test_plot_json(self):
        payload = json.loads(render_plot_json(small_result()))
        assert payload["speed_f1"]["Brake"] == pytest.approx(2 * 0.95 / 1.95)
        assert payload["risk_histogram"] == {"High": 19, "Moderate": 0, "Low": 19}

    def test_empty_result_still_renders(self, tmp_path):
        empty = SuiteResult({}, {}, {}, None, None, None, None, None,
                            {"scenes": 0, "errors": 0})
        paths = write_report(empty, tmp_path)
        assert all(p.exists() for p in paths)
        assert parse_csv((tmp_path / "report.csv").read_text()) == empty


@pytest.fixture(scope="module")
def suite_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    code = main(["generate", "--template", "empty-road,pedestrian-crossing",
                 "--count", "3", "--seed", "0", "--out", str(out)])
    assert code == 0
    return out


class TestEvaluateSuite:
    def test_hazard_free_suite_perfect(self, suite_dir, tmp_path):
        manifest = json.loads((suite_dir / "manifest.json").read_text())
        only_empty = {"scenes": [e for e in manifest["scenes"]
                                 if e["template"] == "empty-road"]}
        path = tmp_path / "manifest.json"
        # scene paths are relative to the manifest location
        path.write_text(json.dumps(
            {"scenes": [{**e, "path": str(suite_dir / e["path"])} for e in
                        only_empty["scenes"]]}))
        result, records = evaluate_suite(path, PipelineConfig())
        assert result.speed_metrics["SpeedLimit"].f1 == 1.0
        assert result.path_accuracy["Straight"] == 1.0
        assert result.counts["errors"] == 0
        assert all(r.error is None for r in records)

    def test_detection_metrics_perfect_oracle(self, suite_dir):
        result, _ = evaluate_suite(suite_dir / "manifest.json", PipelineConfig())
        # noiseless oracle: every box matches its ground truth exactly
        assert result.mean_iou == pytest.approx(1.0, abs=1e-9)
        assert result.detection_accuracy == 1.0
        assert result.reg_error == pytest.approx(0.0, abs=1e-12)
        assert result.speed_metrics["Brake"].f1 == 1.0

    def test_order_invariance(self, suite_dir, tmp_path):
        manifest = json.loads((suite_dir / "manifest.json").read_text())
        fwd = tmp_path / "fwd.json"
        rev = tmp_path / "rev.json"
        entries = [{**e, "path": str(suite_dir / e["path"])} for e in manifest["scenes"]]
        fwd.write_text(json.dumps({"scenes": entries}))
        rev.write_text(json.dumps({"scenes": entries[::-1]}))
        ra, _ = evaluate_suite(fwd, PipelineConfig())
        rb, _ = evaluate_suite(rev, PipelineConfig())
        assert ra == rb

    def test_jobs_parallel_same_result(self, suite_dir):
        ra, _ = evaluate_suite(suite_dir / "manifest.json", PipelineConfig(), jobs=1)
        rb, _ = evaluate_suite(suite_dir / "manifest.json", PipelineConfig(), jobs=4)
        assert ra == rb

    def test_unreadable_scene_reported(self, suite_dir, tmp_path):
        manifest = {"scenes": [
            {"path": str(suite_dir / "scene_empty-road_0000.json"), "template": "empty-road"},
            {"path": str(tmp_path / "missing.json"), "template": "empty-road"},
        ]}
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(manifest))
        result, records = evaluate_suite(path, PipelineConfig())
        assert result.counts["errors"] == 1
        assert result.counts["scenes"] == 2
        errs = [r for r in records if r.error is not None]
        assert len(errs) == 1 and "missing" in errs[0].path
