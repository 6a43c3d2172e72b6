"""Risk-factor extraction, the decision cascade, and explanations."""

import math

import numpy as np
import pytest

from drivetrace.config import PipelineConfig
from drivetrace.interaction import InteractionConfig, build_graph, refine_objects
from drivetrace.pipeline import run_scene
from drivetrace.reasoner import (
    DecisionTrace,
    FactorKind,
    LeadInfo,
    PathDecision,
    ReasonerConfig,
    RiskFactor,
    SpeedDecision,
    decide,
    explain,
    extract_risk_factors,
    find_lead,
    format_trace,
    trace_to_dict,
)
from drivetrace.risk import UncertaintyConfig, assess
from drivetrace.scenario import ScenarioSpec, Template, generate
from drivetrace.scene import EgoState, Intent, PointCloud
from conftest import make_object

CFG = ReasonerConfig()
UCFG = UncertaintyConfig()
EGO = EgoState(heading=0.0, speed=8.0, intent=Intent.STRAIGHT)


def collision(magnitude, object_id=0, *, speed=0.0, adjacent_clear=True,
              cls="Vehicle", d=8.0):
    return RiskFactor(
        kind=FactorKind.COLLISION_RISK,
        magnitude=magnitude,
        object_id=object_id,
        evidence=(("class", cls), ("min_distance", d), ("risk", magnitude),
                  ("tier", "High"), ("speed", speed),
                  ("adjacent_clear", adjacent_clear)),
    )


def occlusion(ratio=0.1, sector=2):
    return RiskFactor(
        kind=FactorKind.OCCLUSION,
        magnitude=1.0 - ratio,
        evidence=(("sector", sector), ("range_start", 20.0), ("range_end", 30.0),
                  ("density_ratio", ratio)),
    )


def unpredictable(u=0.9, object_id=1, cls="Cyclist"):
    return RiskFactor(
        kind=FactorKind.UNPREDICTABLE_OBJECT,
        magnitude=min(1.0, u / 0.8),
        object_id=object_id,
        evidence=(("class", cls), ("uncertainty", u), ("flagged", True),
                  ("high_epistemic", False), ("min_distance", 12.0)),
    )


class TestCascade:
    def test_empty_speed_limit(self):
        trace = decide([], EGO, None, CFG)
        assert trace.speed is SpeedDecision.SPEED_LIMIT
        assert trace.path is PathDecision.STRAIGHT
        assert trace.explanation == "No hazards detected; proceeding at speed limit."

    def test_brake_dominates_everything(self):
        factors = [collision(0.9, cls="Pedestrian", d=5.0), occlusion(), unpredictable()]
        trace = decide(factors, EGO, LeadInfo(9, 12.0, 8.0), CFG)
        assert trace.speed is SpeedDecision.BRAKE

    def test_lane_change_static_moderate(self):
        trace = decide([collision(0.65, speed=0.0, adjacent_clear=True)], EGO, None, CFG)
        assert trace.speed is SpeedDecision.SLOW_DOWN
        assert trace.path is PathDecision.LANE_CHANGE

    def test_lane_change_requires_clear_adjacent(self):
        trace = decide([collision(0.65, adjacent_clear=False)], EGO, None, CFG)
        assert trace.speed is not SpeedDecision.SLOW_DOWN or \
            trace.path is not PathDecision.LANE_CHANGE

    def test_lane_change_requires_static(self):
        trace = decide([collision(0.65, speed=5.0)], EGO, None, CFG)
        assert trace.path is not PathDecision.LANE_CHANGE

    def test_occlusion_slow_approach(self):
        trace = decide([occlusion()], EGO, None, CFG)
        assert trace.speed is SpeedDecision.SLOW_APPROACH

    def test_occlusion_outranks_lead(self):
        trace = decide([occlusion()], EGO, LeadInfo(3, 15.0, 8.0), CFG)
        assert trace.speed is SpeedDecision.SLOW_APPROACH

    def test_unpredictable_slow_down(self):
        trace = decide([unpredictable()], EGO, None, CFG)
        assert trace.speed is SpeedDecision.SLOW_DOWN
        assert trace.path is PathDecision.STRAIGHT

    def test_cautious_turn(self):
        ego = EgoState(heading=0.0, speed=5.0, intent=Intent.TURN)
        trace = decide([], ego, None, CFG)
        assert trace.speed is SpeedDecision.CAUTIOUS_TURN
        assert trace.path is PathDecision.TURN

    def test_follow_ahead(self):
        trace = decide([], EGO, LeadInfo(4, 18.0, 8.0), CFG)
        assert trace.speed is SpeedDecision.FOLLOW_AHEAD

    def test_lead_beyond_gap_ignored(self):
        trace = decide([], EGO, LeadInfo(4, 30.0, 8.0), CFG)
        assert trace.speed is SpeedDecision.SPEED_LIMIT

    def test_pure_function(self):
        factors = [collision(0.72), occlusion(0.2, 3)]
        a = decide(factors, EGO, None, CFG)
        b = decide(factors, EGO, None, CFG)
        assert a == b

    def test_brake_absorbing_monotone(self, rng):
        # adding a brake-level collision factor never softens the decision
        pool = [collision(0.55), occlusion(), unpredictable(),
                collision(0.45, object_id=7, speed=3.0)]
        for _ in range(20):
            subset = [f for f in pool if rng.uniform() < 0.5]
            lead = LeadInfo(5, 15.0, 8.0) if rng.uniform() < 0.5 else None
            with_brake = decide(subset + [collision(0.95, object_id=99)], EGO, lead, CFG)
            assert with_brake.speed is SpeedDecision.BRAKE

    def test_totality(self, rng):
        pool = [collision(0.72), collision(0.55), occlusion(), unpredictable()]
        for intent in Intent:
            ego = EgoState(heading=0.0, speed=8.0, intent=intent)
            for _ in range(10):
                subset = [f for f in pool if rng.uniform() < 0.5]
                trace = decide(subset, ego, None, CFG)
                assert isinstance(trace.speed, SpeedDecision)
                assert isinstance(trace.path, PathDecision)

    def test_trace_structure(self):
        trace = decide([collision(0.9, cls="Pedestrian", d=5.0)], EGO, None, CFG)
        rule_ids = [s.rule_id for s in trace.steps]
        assert rule_ids == ["brake", "lane_change", "occlusion", "unpredictable",
                            "cautious_turn", "follow", "speed_limit", "decision"]
        assert [s.index for s in trace.steps] == list(range(1, 9))
        # final step names the chosen speed decision
        assert trace.speed.value in trace.steps[-1].conclusion
        # every step carries at least one evidence item
        assert all(len(s.evidence) >= 1 for s in trace.steps)


class TestExplain:
    def test_brake_template_exact(self):
        trace = decide([collision(0.9, cls="Pedestrian", d=5.0)], EGO, None, CFG)
        assert trace.explanation == "High risk due to nearby pedestrian at 5.0 m; braking."
        assert explain(trace) == trace.explanation

    def test_speed_limit_template_exact(self):
        trace = decide([], EGO, None, CFG)
        assert trace.explanation == "No hazards detected; proceeding at speed limit."

    def test_two_fired_rules_two_sentences_in_order(self):
        trace = decide([occlusion()], EGO, LeadInfo(4, 18.0, 8.0), CFG)
        assert trace.explanation == (
            "Low visibility in corridor between 20 and 30 m; approaching slowly. "
            "Lead vehicle at 18.0 m; following at safe distance.")

    def test_follow_template(self):
        trace = decide([], EGO, LeadInfo(4, 18.25, 8.0), CFG)
        assert trace.explanation == "Lead vehicle at 18.2 m; following at safe distance."

    def test_byte_identical(self):
        factors = [collision(0.9, cls="Pedestrian", d=5.0), unpredictable()]
        a = decide(factors, EGO, None, CFG).explanation
        b = decide(factors, EGO, None, CFG).explanation
        assert a == b


class TestExtractFactors:
    ICFG = InteractionConfig()

    def scene_factors(self, template, seed=0):
        scene = generate(ScenarioSpec(template=template, seed=seed))
        result = run_scene(scene, PipelineConfig())
        return result

    def test_empty_road_no_factors(self):
        result = self.scene_factors(Template.EMPTY_ROAD)
        assert result.factors == ()

    def test_pedestrian_magnitude_is_risk(self):
        result = self.scene_factors(Template.PEDESTRIAN_CROSSING, seed=3)
        hits = [f for f in result.factors if f.kind is FactorKind.COLLISION_RISK]
        assert len(hits) == 1
        a = result.assessments[0]
        assert hits[0].magnitude == pytest.approx(a.risk)
        assert hits[0].magnitude == pytest.approx(math.exp(-a.min_distance / 20.0))

    def test_corridor_gate_blocks_near_object(self):
        # tier-High object right beside the ego but outside the corridor
        obj = make_object(0, (0.5, 3.0, 0.0), dims=(0.5, 0.5, 1.7), support=(0,))
        cloud = PointCloud(np.array([[0.5, 3.0, 0.5, 1.0]]))
        ego = EgoState(speed=8.0)
        scene = generate(ScenarioSpec(template=Template.EMPTY_ROAD, seed=0))
        scene = scene.with_objects([obj])
        scene = type(scene)(scene.timestamp, ego, cloud, scene.objects, None)
        assessments = assess(scene.objects, ego, cloud)
        assert assessments[0].tier.value == "High"  # would be a High-tier risk...
        graph = build_graph(scene.objects, ego, self.ICFG)
        refined = refine_objects(scene.objects, assessments, graph, ego, UCFG)
        factors = extract_risk_factors(scene, assessments, refined, graph, CFG, UCFG)
        # ...but the corridor gate keeps CollisionRisk out
        assert not any(f.kind is FactorKind.COLLISION_RISK for f in factors)

    def test_occluded_junction_fires_occlusion(self):
        result = self.scene_factors(Template.OCCLUDED_JUNCTION, seed=1)
        occ = [f for f in result.factors if f.kind is FactorKind.OCCLUSION]
        assert occ, "occluded sectors behind the static obstacle must fire"
        for f in occ:
            assert f.get("density_ratio") < CFG.occlusion_density_ratio

    def test_lead_shadow_not_occlusion(self):
        result = self.scene_factors(Template.LEAD_VEHICLE, seed=2)
        assert not any(f.kind is FactorKind.OCCLUSION for f in result.factors)

    def test_flagged_object_unpredictable(self):
        cloud = PointCloud(np.array([[12.0, 0.0, 0.5, 1.0]]))
        ego = EgoState(speed=8.0)
        obj = make_object(0, (12, 0, 0), yaw=3.0, probs=(0.25,) * 4, support=(0,))
        scene = generate(ScenarioSpec(template=Template.EMPTY_ROAD, seed=0))
        scene = type(scene)(scene.timestamp, ego, cloud, (obj,), None)
        assessments = assess(scene.objects, ego, cloud)
        assert assessments[0].flagged
        graph = build_graph(scene.objects, ego, self.ICFG)
        refined = refine_objects(scene.objects, assessments, graph, ego, UCFG)
        factors = extract_risk_factors(scene, assessments, refined, graph, CFG, UCFG)
        unp = [f for f in factors if f.kind is FactorKind.UNPREDICTABLE_OBJECT]
        assert len(unp) == 1
        assert unp[0].magnitude == pytest.approx(
            min(1.0, assessments[0].uncertainty / UCFG.threshold))


class TestLead:
    def test_finds_nearest_corridor_vehicle(self):
        objs = [
            make_object(0, (30, 0, 0), velocity=(8, 0, 0)),
            make_object(1, (15, 0.5, 0), velocity=(7, 0, 0)),
            make_object(2, (10, 5, 0), velocity=(8, 0, 0)),  # adjacent lane
        ]
        lead = find_lead(objs, EGO, CFG)
        assert lead is not None and lead.object_id == 1

    def test_static_vehicle_not_lead(self):
        objs = [make_object(0, (12, 0, 0), velocity=(0, 0, 0))]
        assert find_lead(objs, EGO, CFG) is None

    def test_oncoming_not_lead(self):
        objs = [make_object(0, (20, 0, 0), velocity=(-8, 0, 0))]
        assert find_lead(objs, EGO, CFG) is None

    def test_pedestrian_not_lead(self):
        from drivetrace.scene import ObjectClass
        objs = [make_object(0, (12, 0, 0), velocity=(2, 0, 0),
                            label=ObjectClass.PEDESTRIAN)]
        assert find_lead(objs, EGO, CFG) is None


class TestTraceOutput:
    def test_json_round_trip_fields(self):
        trace = decide([collision(0.9, cls="Pedestrian", d=5.0)], EGO, None, CFG)
        d = trace_to_dict(trace)
        assert d["speed"] == "Brake"
        assert d["path"] == "Straight"
        assert d["explanation"] == trace.explanation
        assert len(d["steps"]) == len(trace.steps)
        assert d["steps"][0]["evidence"]["class"] == "Pedestrian"

    def test_format_trace_mentions_rules(self):
        trace = decide([], EGO, None, CFG)
        text = format_trace(trace)
        for rule in ("brake", "occlusion", "speed_limit"):
            assert rule in text
        assert "SpeedLimit" in text
