"""Rule-cascade decision engine with evidence traces.

Risk factors (collision risk, occlusion, unpredictable objects) are
extracted from the assessed scene, then a fixed-priority cascade selects a
speed and path decision.  Every rule evaluation is recorded as a trace
step with its evidence, and a deterministic template renders the trace as
a short textual explanation.  The whole module is pure: identical inputs
produce byte-identical traces and text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np

from .interaction import EGO_ID, InteractionGraph, RefinedEstimate
from .risk import ObjectAssessment, RiskTier, UncertaintyConfig
from .scene import EgoState, Intent, ObjectClass, Scene, TrackedObject, forward_lateral, in_corridor


class FactorKind(Enum):
    COLLISION_RISK = "CollisionRisk"
    OCCLUSION = "Occlusion"
    UNPREDICTABLE_OBJECT = "UnpredictableObject"


class SpeedDecision(Enum):
    SPEED_LIMIT = "SpeedLimit"
    FOLLOW_AHEAD = "FollowAhead"
    SLOW_DOWN = "SlowDown"
    SLOW_APPROACH = "SlowApproach"
    CAUTIOUS_TURN = "CautiousTurn"
    BRAKE = "Brake"


class PathDecision(Enum):
    STRAIGHT = "Straight"
    TURN = "Turn"
    LANE_CHANGE = "LaneChange"

    @staticmethod
    def from_intent(intent: Intent) -> "PathDecision":
        return PathDecision(intent.value)


@dataclass(frozen=True)
class ReasonerConfig:
    corridor_width: float = 3.5
    corridor_length: float = 40.0
    brake_level: float = 0.7
    slow_level: float = 0.4
    follow_gap: float = 25.0
    occlusion_sectors: int = 4
    occlusion_density_ratio: float = 0.3
    epistemic_threshold: float = 0.5
    static_speed: float = 0.5

    def __post_init__(self) -> None:
        if self.corridor_width <= 0 or self.corridor_length <= 0:
            raise ValueError("corridor dims must be > 0")
        if not (0.0 < self.slow_level < self.brake_level <= 1.0):
            raise ValueError("need 0 < slow_level < brake_level <= 1")
        if self.occlusion_sectors < 1:
            raise ValueError("occlusion_sectors must be >= 1")
        if not (0.0 < self.occlusion_density_ratio < 1.0):
            raise ValueError("occlusion_density_ratio must lie in (0, 1)")


@dataclass(frozen=True)
class RiskFactor:
    kind: FactorKind
    magnitude: float
    object_id: Optional[int] = None
    evidence: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self) -> None:
        if not (0.0 <= self.magnitude <= 1.0):
            raise ValueError(f"magnitude must lie in [0, 1], got {self.magnitude}")
        if self.kind in (FactorKind.COLLISION_RISK, FactorKind.UNPREDICTABLE_OBJECT) \
                and self.object_id is None:
            raise ValueError(f"{self.kind.value} factors must carry an object_id")

    def get(self, key: str, default: Any = None) -> Any:
        for k, v in self.evidence:
            if k == key:
                return v
        return default


@dataclass(frozen=True)
class LeadInfo:
    object_id: int
    distance: float  # forward distance along ego heading, meters
    speed: float


@dataclass(frozen=True)
class TraceStep:
    index: int
    rule_id: str
    passed: bool
    evidence: tuple[tuple[str, Any], ...]
    conclusion: str


@dataclass(frozen=True)
class DecisionTrace:
    steps: tuple[TraceStep, ...]
    speed: SpeedDecision
    path: PathDecision
    explanation: str


def _class_name(obj: TrackedObject) -> str:
    return obj.class_dist.top_class.value


def _adjacent_clear(scene_objects: Sequence[TrackedObject], exclude_id: int,
                    ego: EgoState, cfg: ReasonerConfig) -> bool:
    """True if at least one adjacent-lane corridor is free of other objects."""
    for offset in (cfg.corridor_width, -cfg.corridor_width):
        blocked = any(
            o.id != exclude_id
            and in_corridor(o.box.center[0], o.box.center[1], ego,
                            cfg.corridor_width, cfg.corridor_length, offset)
            for o in scene_objects
        )
        if not blocked:
            return True
    return False


def _sector_densities(scene: Scene, cfg: ReasonerConfig) -> list[float]:
    """Cloud point density (points / m^2) per corridor range sector."""
    xyz = scene.cloud.xyz
    if xyz.shape[0] == 0:
        return [0.0] * cfg.occlusion_sectors
    c, s = math.cos(scene.ego.heading), math.sin(scene.ego.heading)
    fwd = xyz[:, 0] * c + xyz[:, 1] * s
    lat = -xyz[:, 0] * s + xyz[:, 1] * c
    half = cfg.corridor_width / 2.0
    sector_len = cfg.corridor_length / cfg.occlusion_sectors
    area = sector_len * cfg.corridor_width
    densities = []
    for k in range(cfg.occlusion_sectors):
        lo, hi = k * sector_len, (k + 1) * sector_len
        n = int(np.count_nonzero((fwd >= lo) & (fwd < hi) & (np.abs(lat) <= half)))
        densities.append(n / area)
    return densities


def _moving_block_distance(objects: Sequence[TrackedObject], ego: EgoState,
                           cfg: ReasonerConfig) -> Optional[float]:
    """Forward distance to the nearest moving corridor object, if any.

    Corridor sectors behind a moving object (a lead) are expected to be
    shadowed and are excluded from occlusion analysis; static occluders do
    not get this exemption.
    """
    dists = []
    for o in objects:
        if o.speed <= cfg.static_speed:
            continue
        if not in_corridor(o.box.center[0], o.box.center[1], ego,
                           cfg.corridor_width, cfg.corridor_length):
            continue
        fwd, _ = forward_lateral(o.box.center[0], o.box.center[1], ego)
        dists.append(fwd - o.box.length / 2.0)
    return min(dists) if dists else None


def extract_risk_factors(
    scene: Scene,
    assessments: Sequence[ObjectAssessment],
    refined: Sequence[RefinedEstimate],
    graph: InteractionGraph,
    cfg: ReasonerConfig,
    ucfg: UncertaintyConfig,
) -> list[RiskFactor]:
    """Evaluate collision, occlusion and unpredictability factors.

    Collision risk fires for high-tier objects inside the ego corridor,
    with the proximity risk as magnitude.  Occlusion fires for corridor
    sectors whose point density falls below the configured fraction of the
    densest sector.  Unpredictability fires for flagged objects and for
    objects whose epistemic spread exceeds its threshold.
    """
    objects = {o.id: o for o in scene.objects}
    refined_by_id = {r.object_id: r for r in refined}
    factors: list[RiskFactor] = []

    for a in sorted(assessments, key=lambda x: x.object_id):
        obj = objects[a.object_id]
        cx, cy = obj.box.center[0], obj.box.center[1]
        if a.tier is RiskTier.HIGH and in_corridor(cx, cy, scene.ego,
                                                   cfg.corridor_width, cfg.corridor_length):
            factors.append(RiskFactor(
                kind=FactorKind.COLLISION_RISK,
                magnitude=min(a.risk, 1.0),
                object_id=a.object_id,
                evidence=(
                    ("class", _class_name(obj)),
                    ("min_distance", a.min_distance),
                    ("risk", a.risk),
                    ("tier", a.tier.value),
                    ("speed", obj.speed),
                    ("adjacent_clear", _adjacent_clear(scene.objects, obj.id,
                                                       scene.ego, cfg)),
                ),
            ))

    densities = _sector_densities(scene, cfg)
    ambient = max(densities)
    block = _moving_block_distance(scene.objects, scene.ego, cfg)
    sector_len = cfg.corridor_length / cfg.occlusion_sectors
    if ambient > 0:
        for k, density in enumerate(densities):
            start = k * sector_len
            if block is not None and start >= block - 1.0:
                continue  # expected shadow of a lead vehicle
            ratio = density / ambient
            if ratio < cfg.occlusion_density_ratio:
                factors.append(RiskFactor(
                    kind=FactorKind.OCCLUSION,
                    magnitude=min(max(1.0 - ratio, 0.0), 1.0),
                    evidence=(
                        ("sector", k),
                        ("range_start", start),
                        ("range_end", start + sector_len),
                        ("density_ratio", ratio),
                    ),
                ))

    for a in sorted(assessments, key=lambda x: x.object_id):
        est = refined_by_id.get(a.object_id)
        high_epistemic = est is not None and len(est.epistemic_std) > 0 \
            and max(est.epistemic_std) > cfg.epistemic_threshold
        if a.flagged or high_epistemic:
            factors.append(RiskFactor(
                kind=FactorKind.UNPREDICTABLE_OBJECT,
                magnitude=min(1.0, a.uncertainty / ucfg.threshold),
                object_id=a.object_id,
                evidence=(
                    ("class", _class_name(objects[a.object_id])),
                    ("uncertainty", a.uncertainty),
                    ("flagged", a.flagged),
                    ("high_epistemic", high_epistemic),
                    ("min_distance", a.min_distance),
                ),
            ))
    return factors


def find_lead(objects: Sequence[TrackedObject], ego: EgoState,
              cfg: ReasonerConfig) -> Optional[LeadInfo]:
    """Nearest moving vehicle ahead in the corridor, travelling with ego."""
    best: Optional[LeadInfo] = None
    for o in objects:
        if o.class_dist.top_class is not ObjectClass.VEHICLE:
            continue
        if o.speed <= cfg.static_speed:
            continue
        cx, cy = o.box.center[0], o.box.center[1]
        if not in_corridor(cx, cy, ego, cfg.corridor_width, cfg.corridor_length):
            continue
        vel_dir = math.atan2(o.velocity[1], o.velocity[0])
        if math.cos(vel_dir - ego.heading) <= 0:
            continue  # oncoming, not a lead
        fwd, _ = forward_lateral(cx, cy, ego)
        if best is None or fwd < best.distance:
            best = LeadInfo(object_id=o.id, distance=fwd, speed=o.speed)
    return best


# (rule id, action clause used by the explanation templates)
_RULES = (
    ("brake", "braking"),
    ("lane_change", "changing lane and slowing down"),
    ("occlusion", "approaching slowly"),
    ("unpredictable", "slowing down"),
    ("cautious_turn", "proceeding with caution"),
    ("follow", "following at safe distance"),
    ("speed_limit", "proceeding at speed limit"),
)


def decide(factors: Sequence[RiskFactor], ego: EgoState,
           lead: Optional[LeadInfo], cfg: ReasonerConfig) -> DecisionTrace:
    """Run the priority cascade and return the full decision trace.

    Rules, in order: (1) brake on any collision risk at or above
    brake_level; (2) lane-change + slow-down for a moderate static
    obstacle with a clear adjacent lane; (3) slow approach on occlusion;
    (4) slow down for unpredictable objects; (5) cautious turn when the
    ego intends to turn; (6) follow a lead vehicle within the follow gap;
    (7) default to the speed limit.  The first passing rule decides; every
    rule is still evaluated and recorded.  Path is LaneChange only via
    rule 2, otherwise the ego intent.
    """
    collisions = [f for f in factors if f.kind is FactorKind.COLLISION_RISK]
    occlusions = [f for f in factors if f.kind is FactorKind.OCCLUSION]
    unpredictables = [f for f in factors if f.kind is FactorKind.UNPREDICTABLE_OBJECT]

    brake_hits = [f for f in collisions if f.magnitude >= cfg.brake_level]
    lane_hits = [
        f for f in collisions
        if cfg.slow_level < f.magnitude < cfg.brake_level
        and f.get("speed", 0.0) <= cfg.static_speed
        and f.get("adjacent_clear", False)
    ]

    steps: list[TraceStep] = []
    decision: Optional[tuple[SpeedDecision, PathDecision]] = None
    intent_path = PathDecision.from_intent(ego.intent)

    def record(rule_id: str, passed: bool, evidence: tuple[tuple[str, Any], ...],
               conclusion: str) -> None:
        steps.append(TraceStep(len(steps) + 1, rule_id, passed, evidence, conclusion))

    def factor_ref(f: RiskFactor) -> tuple[tuple[str, Any], ...]:
        return (("factor", f.kind.value), ("object_id", f.object_id),
                ("magnitude", f.magnitude)) + f.evidence

    # 1: brake
    if brake_hits:
        f = max(brake_hits, key=lambda f: f.magnitude)
        record("brake", True, factor_ref(f),
               f"collision risk {f.magnitude:.3f} >= {cfg.brake_level}: Brake")
        decision = (SpeedDecision.BRAKE, intent_path)
    else:
        record("brake", False, (("max_collision_risk",
                                 max((f.magnitude for f in collisions), default=0.0)),),
               f"no collision risk >= {cfg.brake_level}")

    # 2: lane change around a static obstacle
    if lane_hits:
        f = max(lane_hits, key=lambda f: f.magnitude)
        record("lane_change", True, factor_ref(f),
               f"static obstacle risk {f.magnitude:.3f} in "
               f"({cfg.slow_level}, {cfg.brake_level}), adjacent lane clear: "
               "SlowDown, path LaneChange")
        if decision is None:
            decision = (SpeedDecision.SLOW_DOWN, PathDecision.LANE_CHANGE)
    else:
        record("lane_change", False, (("n_collision_factors", len(collisions)),),
               "no moderate static corridor obstacle with clear adjacent lane")

    # 3: occlusion
    if occlusions:
        f = max(occlusions, key=lambda f: f.magnitude)
        record("occlusion", True, factor_ref(f),
               f"corridor sector {f.get('sector')} density ratio "
               f"{f.get('density_ratio'):.3f} below {cfg.occlusion_density_ratio}: "
               "SlowApproach")
        if decision is None:
            decision = (SpeedDecision.SLOW_APPROACH, intent_path)
    else:
        record("occlusion", False, (("n_occlusion_factors", 0),),
               "no occluded corridor sector")

    # 4: unpredictable objects
    if unpredictables:
        f = max(unpredictables, key=lambda f: f.magnitude)
        record("unpredictable", True, factor_ref(f),
               f"object {f.object_id} uncertainty above threshold: SlowDown")
        if decision is None:
            decision = (SpeedDecision.SLOW_DOWN, intent_path)
    else:
        record("unpredictable", False, (("n_unpredictable_factors", 0),),
               "no unpredictable objects")

    # 5: turning intent
    if ego.intent is Intent.TURN:
        record("cautious_turn", True, (("intent", ego.intent.value),),
               "ego intends to turn: CautiousTurn")
        if decision is None:
            decision = (SpeedDecision.CAUTIOUS_TURN, intent_path)
    else:
        record("cautious_turn", False, (("intent", ego.intent.value),),
               "ego not turning")

    # 6: lead vehicle
    if lead is not None and lead.distance <= cfg.follow_gap:
        record("follow", True,
               (("object_id", lead.object_id), ("distance", lead.distance),
                ("speed", lead.speed)),
               f"lead vehicle at {lead.distance:.1f} m within follow gap: FollowAhead")
        if decision is None:
            decision = (SpeedDecision.FOLLOW_AHEAD, intent_path)
    else:
        record("follow", False,
               (("lead_distance", None if lead is None else lead.distance),),
               "no lead vehicle within follow gap")

    # 7: default
    if decision is None:
        record("speed_limit", True, (("n_factors", len(factors)),),
               "no hazards detected: SpeedLimit")
        decision = (SpeedDecision.SPEED_LIMIT, intent_path)
    else:
        record("speed_limit", False, (("n_factors", len(factors)),),
               "higher-priority rule already decided")

    speed, path = decision
    record("decision", True,
           (("speed", speed.value), ("path", path.value)),
           f"Decision: {speed.value} / {path.value}")
    explanation = _render_explanation(steps)
    return DecisionTrace(tuple(steps), speed, path, explanation)


def _sentence(step: TraceStep) -> Optional[str]:
    """Explanation sentence for a passed rule: 'evidence; action.'"""
    ev = dict(step.evidence)
    action = dict(_RULES).get(step.rule_id)
    if step.rule_id == "brake":
        return (f"High risk due to nearby {ev['class'].lower()} at "
                f"{ev['min_distance']:.1f} m; {action}.")
    if step.rule_id == "lane_change":
        return (f"Moderate risk from static {ev['class'].lower()} at "
                f"{ev['min_distance']:.1f} m; {action}.")
    if step.rule_id == "occlusion":
        return (f"Low visibility in corridor between {ev['range_start']:.0f} and "
                f"{ev['range_end']:.0f} m; {action}.")
    if step.rule_id == "unpredictable":
        return (f"Unpredictable {ev['class'].lower()} with uncertainty "
                f"{ev['uncertainty']:.2f}; {action}.")
    if step.rule_id == "cautious_turn":
        return f"Turning ahead; {action}."
    if step.rule_id == "follow":
        return f"Lead vehicle at {ev['distance']:.1f} m; {action}."
    if step.rule_id == "speed_limit":
        return f"No hazards detected; {action}."
    return None


def _render_explanation(steps: Sequence[TraceStep]) -> str:
    sentences = []
    for step in steps:
        if not step.passed or step.rule_id == "decision":
            continue
        text = _sentence(step)
        if text:
            sentences.append(text)
    return " ".join(sentences)


def explain(trace: DecisionTrace) -> str:
    """Deterministic textual explanation: one sentence per fired rule, in
    trace order, each ending with that rule's action clause."""
    return _render_explanation(trace.steps)


def trace_to_dict(trace: DecisionTrace) -> dict:
    return {
        "steps": [
            {
                "index": s.index,
                "rule_id": s.rule_id,
                "passed": s.passed,
                "evidence": {k: v for k, v in s.evidence},
                "conclusion": s.conclusion,
            }
            for s in trace.steps
        ],
        "speed": trace.speed.value,
        "path": trace.path.value,
        "explanation": trace.explanation,
    }


def format_trace(trace: DecisionTrace) -> str:
    """Numbered plain-text rendering of the reasoning steps."""
    lines = []
    for s in trace.steps:
        mark = "PASS" if s.passed else "skip"
        lines.append(f"{s.index:2d}. [{mark}] {s.rule_id}: {s.conclusion}")
        for k, v in s.evidence:
            lines.append(f"      - {k} = {v}")
    lines.append(f"speed decision: {trace.speed.value}")
    lines.append(f"path decision:  {trace.path.value}")
    lines.append(f"explanation:    {trace.explanation}")
    return "\n".join(lines)


def risk_factors_with_graph_refs(factors: Sequence[RiskFactor],
                                 graph: InteractionGraph) -> list[RiskFactor]:
    """Attach the ego-edge attention as extra evidence where available."""
    ego_edges = {e.src: e for e in graph.in_edges(EGO_ID)}
    out = []
    for f in factors:
        if f.object_id is not None and f.object_id in ego_edges:
            e = ego_edges[f.object_id]
            out.append(RiskFactor(
                f.kind, f.magnitude, f.object_id,
                f.evidence + (("ego_edge_attention", e.attention),
                              ("ego_edge_energy", e.energy)),
            ))
        else:
            out.append(f)
    return out
