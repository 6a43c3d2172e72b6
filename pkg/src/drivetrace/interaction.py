"""Object interaction graph and Bayesian message-passing refinement.

Objects (plus the ego vehicle) form a directed graph; each edge carries a
linear interaction energy over relative distance, speed difference and a
contextual intensity term, and attention weights are the per-node softmax
of the (negated, by default) edge energies.  A Bayesian GNN with Gaussian
weight posteriors runs message passing over this graph; Monte Carlo
sampling of the weights yields mean predictions plus an epistemic spread.
Training maximizes the ELBO: Monte Carlo cross-entropy plus a closed-form
KL penalty to a zero-mean Gaussian prior, with gradients propagated
through the reparameterized weight draws.

Class beliefs are refined separately by log-linear pooling of neighbor
distributions under the edge attention weights, which can only sharpen
agreeing evidence.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .risk import ObjectAssessment, UncertaintyConfig, combined_uncertainty, shannon_entropy
from .scene import (
    ClassDistribution,
    EgoState,
    ObjectClass,
    TrackedObject,
    in_corridor,
)

EGO_ID = -1
#: nominal ego body used for the ego node features
EGO_DIMS = (4.5, 1.9, 1.6)
FEATURE_DIM = 16  # center 3 + velocity 3 + dims 3 + sin/cos yaw + class 4 + risk
MODEL_MAGIC = b"BGNN0001"
PROB_FLOOR = 1e-9
STATIC_SPEED = 0.5


class InteractionLabel(Enum):
    YIELD = "Yield"
    FOLLOW = "Follow"
    IGNORE = "Ignore"

    @property
    def index(self) -> int:
        return list(InteractionLabel).index(self)


@dataclass(frozen=True)
class InteractionConfig:
    """Graph construction and BGNN hyperparameters."""

    edge_radius: float = 30.0
    w_distance: Optional[float] = None  # defaults to 1 / edge_radius
    w_speed: float = 0.1
    w_intensity: float = 1.0
    layers: int = 3
    embed_dim: int = 128
    mc_samples: int = 8
    prior_std: float = 1.0
    # default reads low energy as strong coupling (attention ~ exp(-e));
    # set True to flip the sign
    attention_positive_energy: bool = False

    def __post_init__(self) -> None:
        if self.edge_radius <= 0:
            raise ValueError("edge_radius must be > 0")
        if self.layers < 1 or self.embed_dim < 1:
            raise ValueError("layers and embed_dim must be >= 1")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.prior_std <= 0:
            raise ValueError("prior_std must be > 0")
        if self.w_distance is None:
            object.__setattr__(self, "w_distance", 1.0 / self.edge_radius)
        if self.w_distance < 0 or self.w_speed < 0 or self.w_intensity < 0:
            raise ValueError("energy weights must be >= 0")


@dataclass(frozen=True)
class InteractionEdge:
    src: int
    dst: int
    distance: float
    speed_diff: float
    intensity: float
    energy: float
    attention: float = 0.0


@dataclass(frozen=True)
class InteractionGraph:
    """Directed interaction graph over object nodes plus the ego node."""

    node_ids: tuple[int, ...]
    edges: tuple[InteractionEdge, ...]

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def index_of(self, node_id: int) -> int:
        return self.node_ids.index(node_id)

    def in_edges(self, node_id: int) -> list[InteractionEdge]:
        return [e for e in self.edges if e.dst == node_id]

    def attention_matrix(self) -> np.ndarray:
        """A[dst, src] = attention of edge src -> dst (rows sum to 1 or 0)."""
        idx = {nid: i for i, nid in enumerate(self.node_ids)}
        a = np.zeros((self.n_nodes, self.n_nodes))
        for e in self.edges:
            a[idx[e.dst], idx[e.src]] = e.attention
        return a


def interaction_energy(distance: float, speed_diff: float, intensity: float,
                       cfg: InteractionConfig) -> float:
    """Linear pairwise energy over distance, speed difference and intensity."""
    if distance < 0 or speed_diff < 0:
        raise ValueError("distance and speed_diff must be >= 0")
    return cfg.w_distance * distance + cfg.w_speed * speed_diff + cfg.w_intensity * intensity


def _pair_factor(a: ObjectClass, b: ObjectClass) -> float:
    pair = {a, b}
    if pair == {ObjectClass.VEHICLE, ObjectClass.PEDESTRIAN}:
        return 1.0
    if pair == {ObjectClass.VEHICLE}:
        return 0.8
    return 0.5


def contextual_intensity(
    src_center: np.ndarray,
    dst_center: np.ndarray,
    src_heading: float,
    src_class: ObjectClass,
    dst_class: ObjectClass,
) -> float:
    """Heading-alignment intensity in [0, 1]: maximal when the source
    heads straight at the destination, scaled by a class-pair factor."""
    bearing = math.atan2(dst_center[1] - src_center[1], dst_center[0] - src_center[0])
    alignment = 0.5 * (1.0 + math.cos(src_heading - bearing))
    return alignment * _pair_factor(src_class, dst_class)


@dataclass(frozen=True)
class _Node:
    node_id: int
    center: np.ndarray
    velocity: np.ndarray
    heading: float
    label: ObjectClass


def _object_heading(obj: TrackedObject) -> float:
    if obj.speed > STATIC_SPEED:
        return math.atan2(obj.velocity[1], obj.velocity[0])
    return obj.box.yaw


def build_graph(objects: Sequence[TrackedObject], ego: EgoState,
                cfg: InteractionConfig) -> InteractionGraph:
    """Build the interaction graph: object nodes plus the ego node, with
    directed edges between all node pairs within ``edge_radius``.

    Attention is normalized over each node's in-edges.
    """
    nodes = [
        _Node(o.id, np.asarray(o.box.center), np.asarray(o.velocity),
              _object_heading(o), o.class_dist.top_class)
        for o in objects
    ]
    ego_vel = ego.speed * np.array([math.cos(ego.heading), math.sin(ego.heading), 0.0])
    nodes.append(_Node(EGO_ID, np.asarray(ego.position), ego_vel, ego.heading,
                       ObjectClass.VEHICLE))
    raw_edges: list[InteractionEdge] = []
    for src in nodes:
        for dst in nodes:
            if src.node_id == dst.node_id:
                continue
            d = float(np.linalg.norm(src.center - dst.center))
            if d > cfg.edge_radius:
                continue
            dv = float(np.linalg.norm(src.velocity - dst.velocity))
            inten = contextual_intensity(src.center, dst.center, src.heading,
                                         src.label, dst.label)
            e = interaction_energy(d, dv, inten, cfg)
            raw_edges.append(InteractionEdge(src.node_id, dst.node_id, d, dv, inten, e))
    sign = 1.0 if cfg.attention_positive_energy else -1.0
    edges: list[InteractionEdge] = []
    for node in nodes:
        incoming = [e for e in raw_edges if e.dst == node.node_id]
        if not incoming:
            continue
        logits = np.array([sign * e.energy for e in incoming])
        w = np.exp(logits - logits.max())
        w /= w.sum()
        edges.extend(replace(e, attention=float(a)) for e, a in zip(incoming, w))
    return InteractionGraph(tuple(n.node_id for n in nodes), tuple(edges))


def node_features(obj: TrackedObject, assessment: ObjectAssessment) -> np.ndarray:
    """Feature vector [center, velocity, dims, sin/cos yaw, class probs,
    risk], length 16.  Ordering is part of the model format."""
    b = obj.box
    return np.array(
        [
            *b.center,
            *obj.velocity,
            b.length,
            b.width,
            b.height,
            math.sin(b.yaw),
            math.cos(b.yaw),
            *obj.class_dist.probs,
            assessment.risk,
        ]
    )


def ego_features(ego: EgoState) -> np.ndarray:
    vel = ego.speed * np.array([math.cos(ego.heading), math.sin(ego.heading), 0.0])
    one_hot = [0.0] * 4
    one_hot[ObjectClass.VEHICLE.index] = 1.0
    return np.array(
        [
            *ego.position,
            *vel,
            *EGO_DIMS,
            math.sin(ego.heading),
            math.cos(ego.heading),
            *one_hot,
            1.0,  # risk at zero distance
        ]
    )


def graph_features(
    objects: Sequence[TrackedObject],
    assessments: Sequence[ObjectAssessment],
    ego: EgoState,
) -> np.ndarray:
    """Stack node features in graph node order (objects then ego)."""
    by_id = {a.object_id: a for a in assessments}
    rows = [node_features(o, by_id[o.id]) for o in objects]
    rows.append(ego_features(ego))
    return np.stack(rows) if rows else np.empty((0, FEATURE_DIM))


# ---------------------------------------------------------------------------
# Bayesian GNN
# ---------------------------------------------------------------------------


@dataclass
class BayesianLayer:
    """Linear layer with independent Gaussian posteriors per parameter."""

    weight_means: np.ndarray
    weight_log_stds: np.ndarray
    bias_means: np.ndarray
    bias_log_stds: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.weight_means.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight_means.shape[1]

    @staticmethod
    def initialize(out_dim: int, in_dim: int, rng: np.random.Generator,
                   init_log_std: float = math.log(0.05)) -> "BayesianLayer":
        return BayesianLayer(
            weight_means=rng.normal(0.0, 1.0 / math.sqrt(in_dim), (out_dim, in_dim)),
            weight_log_stds=np.full((out_dim, in_dim), init_log_std),
            bias_means=np.zeros(out_dim),
            bias_log_stds=np.full(out_dim, init_log_std),
        )

    def arrays(self) -> list[np.ndarray]:
        return [self.weight_means, self.weight_log_stds, self.bias_means, self.bias_log_stds]


@dataclass
class LayerGrads:
    weight_means: np.ndarray
    weight_log_stds: np.ndarray
    bias_means: np.ndarray
    bias_log_stds: np.ndarray

    @staticmethod
    def zeros_like(layer: BayesianLayer) -> "LayerGrads":
        return LayerGrads(*(np.zeros_like(a) for a in layer.arrays()))

    def arrays(self) -> list[np.ndarray]:
        return [self.weight_means, self.weight_log_stds, self.bias_means, self.bias_log_stds]


@dataclass
class BgnnModel:
    """Message-passing BGNN: per round a self layer and a neighbor layer,
    then a class head.  ``params`` is flat:
    [self_0, nbr_0, self_1, nbr_1, ..., head]."""

    config: InteractionConfig
    in_dim: int
    out_dim: int
    params: list[BayesianLayer]

    @staticmethod
    def initialize(cfg: InteractionConfig, in_dim: int = FEATURE_DIM,
                   out_dim: int = len(InteractionLabel), seed: int = 0) -> "BgnnModel":
        rng = np.random.default_rng(seed)
        params: list[BayesianLayer] = []
        d_in = in_dim
        for _ in range(cfg.layers):
            params.append(BayesianLayer.initialize(cfg.embed_dim, d_in, rng))
            params.append(BayesianLayer.initialize(cfg.embed_dim, d_in, rng))
            d_in = cfg.embed_dim
        params.append(BayesianLayer.initialize(out_dim, d_in, rng))
        return BgnnModel(cfg, in_dim, out_dim, params)

    @property
    def n_rounds(self) -> int:
        return (len(self.params) - 1) // 2


def _sample_layers(params: Sequence[BayesianLayer], rng: np.random.Generator
                   ) -> tuple[list[list[np.ndarray]], list[list[np.ndarray]]]:
    """Draw (weights, biases) per layer via w = mu + sigma * eps.
    Returns ([W, b] per layer, [epsW, epsb] per layer)."""
    values, epsilons = [], []
    for layer in params:
        eps_w = rng.standard_normal(layer.weight_means.shape)
        eps_b = rng.standard_normal(layer.bias_means.shape)
        w = layer.weight_means + np.exp(layer.weight_log_stds) * eps_w
        b = layer.bias_means + np.exp(layer.bias_log_stds) * eps_b
        values.append([w, b])
        epsilons.append([eps_w, eps_b])
    return values, epsilons


def _forward(values: Sequence[Sequence[np.ndarray]], attention: np.ndarray,
             feats: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run message passing; returns logits and per-round activations
    [H_0, H_1, ..., H_L] (H_0 = inputs)."""
    h = feats
    activations = [h]
    n_rounds = (len(values) - 1) // 2
    for r in range(n_rounds):
        w_self, b_self = values[2 * r]
        w_nbr, b_nbr = values[2 * r + 1]
        msg = h @ w_nbr.T + b_nbr
        z = h @ w_self.T + b_self + attention @ msg
        h = np.tanh(z)
        activations.append(h)
    w_head, b_head = values[-1]
    logits = h @ w_head.T + b_head
    return logits, activations


def forward_mc(graph: InteractionGraph, feats: np.ndarray,
               params: Sequence[BayesianLayer], mc_samples: int, seed: int = 0
               ) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo forward pass: mean and std of the logits over
    ``mc_samples`` weight draws.  Bit-reproducible for a given seed; sample
    s uses the PCG64 stream seeded with (seed, s)."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    attention = graph.attention_matrix()
    if feats.shape[0] != graph.n_nodes:
        raise ValueError(f"feature rows {feats.shape[0]} != nodes {graph.n_nodes}")
    samples = []
    for s in range(mc_samples):
        rng = np.random.default_rng([seed, s])
        values, _ = _sample_layers(params, rng)
        logits, _ = _forward(values, attention, feats)
        samples.append(logits)
    stack = np.stack(samples)
    return stack.mean(axis=0), stack.std(axis=0)


def forward_mean(graph: InteractionGraph, feats: np.ndarray,
                 params: Sequence[BayesianLayer]) -> np.ndarray:
    """Deterministic forward pass using the posterior means."""
    values = [[layer.weight_means, layer.bias_means] for layer in params]
    logits, _ = _forward(values, graph.attention_matrix(), feats)
    return logits


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def kl_to_prior(params: Sequence[BayesianLayer], prior_std: float) -> float:
    """Closed-form KL(q || N(0, prior_std^2)) summed over all parameters."""
    total = 0.0
    for layer in params:
        for mu, log_std in ((layer.weight_means, layer.weight_log_stds),
                            (layer.bias_means, layer.bias_log_stds)):
            var = np.exp(2.0 * log_std)
            total += float(np.sum(
                math.log(prior_std) - log_std
                + (var + mu ** 2) / (2.0 * prior_std ** 2) - 0.5
            ))
    return total


def elbo_loss(
    params: Sequence[BayesianLayer],
    batch: Sequence[tuple[InteractionGraph, np.ndarray, np.ndarray]],
    seed: int,
    prior_std: float,
    mc_samples: int,
    kl_weight: Optional[float] = None,
) -> tuple[float, list[LayerGrads]]:
    """ELBO-style loss and analytic gradients.

    ``batch`` holds (graph, features, labels) triples; labels are int
    class indices per node, -1 for unlabeled nodes.  The loss is the MC
    mean (over weight samples) of the batch-mean node cross-entropy, plus
    ``kl_weight`` (default 1/len(batch)) times the closed-form KL to the
    prior.  Gradients flow through the reparameterized draws
    w = mu + sigma * eps.
    """
    if kl_weight is None:
        kl_weight = 1.0 / len(batch)
    grads = [LayerGrads.zeros_like(layer) for layer in params]
    n_graphs = len(batch)
    ce_total = 0.0
    prepared = [(g.attention_matrix(), feats, labels) for g, feats, labels in batch]
    for s in range(mc_samples):
        rng = np.random.default_rng([seed, s])
        values, epsilons = _sample_layers(params, rng)
        raw = [[np.zeros_like(w), np.zeros_like(b)] for w, b in values]
        for attention, feats, labels in prepared:
            logits, activations = _forward(values, attention, feats)
            mask = labels >= 0
            n_labeled = int(mask.sum())
            if n_labeled == 0:
                continue
            probs = _softmax(logits)
            labeled = np.nonzero(mask)[0]
            picked = probs[labeled, labels[labeled]]
            ce_total += float(-np.log(np.maximum(picked, 1e-300)).sum()) / n_labeled / n_graphs
            d_logits = probs.copy()
            d_logits[labeled, labels[labeled]] -= 1.0
            d_logits[~mask] = 0.0
            d_logits /= n_labeled * n_graphs
            # head
            w_head, _ = values[-1]
            h_top = activations[-1]
            raw[-1][0] += d_logits.T @ h_top
            raw[-1][1] += d_logits.sum(axis=0)
            d_h = d_logits @ w_head
            # message-passing rounds, top down
            for r in range((len(values) - 1) // 2 - 1, -1, -1):
                h_out = activations[r + 1]
                h_in = activations[r]
                d_z = d_h * (1.0 - h_out ** 2)
                d_msg = attention.T @ d_z
                w_self, _ = values[2 * r]
                w_nbr, _ = values[2 * r + 1]
                raw[2 * r][0] += d_z.T @ h_in
                raw[2 * r][1] += d_z.sum(axis=0)
                raw[2 * r + 1][0] += d_msg.T @ h_in
                raw[2 * r + 1][1] += d_msg.sum(axis=0)
                d_h = d_z @ w_self + d_msg @ w_nbr
        # map raw weight grads onto (mu, log_std) via the reparameterization
        for layer, g, (d_w, d_b), (eps_w, eps_b) in zip(params, grads, raw, epsilons):
            g.weight_means += d_w / mc_samples
            g.bias_means += d_b / mc_samples
            g.weight_log_stds += d_w * eps_w * np.exp(layer.weight_log_stds) / mc_samples
            g.bias_log_stds += d_b * eps_b * np.exp(layer.bias_log_stds) / mc_samples
    loss = ce_total / mc_samples + kl_weight * kl_to_prior(params, prior_std)
    for layer, g in zip(params, grads):
        var_w = np.exp(2.0 * layer.weight_log_stds)
        var_b = np.exp(2.0 * layer.bias_log_stds)
        g.weight_means += kl_weight * layer.weight_means / prior_std ** 2
        g.bias_means += kl_weight * layer.bias_means / prior_std ** 2
        g.weight_log_stds += kl_weight * (var_w / prior_std ** 2 - 1.0)
        g.bias_log_stds += kl_weight * (var_b / prior_std ** 2 - 1.0)
    return loss, grads


# ---------------------------------------------------------------------------
# Class-belief fusion and uncertainty refinement
# ---------------------------------------------------------------------------


def fuse_refine(raw: ClassDistribution,
                neighbor_evidence: Iterable[tuple[ClassDistribution, float]]
                ) -> ClassDistribution:
    """Log-linear pooling of the raw belief with attention-weighted
    neighbor beliefs: log q = log raw + sum_j a_j log p_j, renormalized.
    Probabilities are floored at 1e-9 before taking logs.  With agreeing
    evidence this never increases entropy."""
    log_q = np.log(np.maximum(raw.as_array(), PROB_FLOOR))
    for dist, attention in neighbor_evidence:
        if not (0.0 <= attention <= 1.0):
            raise ValueError(f"attention must lie in [0, 1], got {attention}")
        log_q = log_q + attention * np.log(np.maximum(dist.as_array(), PROB_FLOOR))
    q = np.exp(log_q - log_q.max())
    return ClassDistribution.from_array(q)


def refine_uncertainty(
    fused: ClassDistribution,
    deviation: float,
    cfg: UncertaintyConfig,
) -> float:
    """Recompute the combined uncertainty from the fused class belief; the
    deviation component is left unchanged."""
    return combined_uncertainty(shannon_entropy(fused), deviation, cfg)


@dataclass(frozen=True)
class RefinedEstimate:
    object_id: int
    refined_class_dist: ClassDistribution
    refined_uncertainty: float
    epistemic_std: tuple[float, ...]
    interaction_label: InteractionLabel


def classify_interaction(
    center: Sequence[float],
    velocity: Sequence[float],
    top_class: ObjectClass,
    ego: EgoState,
    corridor_width: float = 3.5,
    corridor_length: float = 40.0,
) -> InteractionLabel:
    """Kinematic interaction rule.

    Yield for corridor objects closing faster than 0.5 m/s and for any
    pedestrian in the corridor; Follow for corridor vehicles receding or
    matching speed; Ignore otherwise.
    """
    if not in_corridor(center[0], center[1], ego, corridor_width, corridor_length):
        return InteractionLabel.IGNORE
    ego_vel = ego.speed * np.array([math.cos(ego.heading), math.sin(ego.heading), 0.0])
    rel_v = np.asarray(velocity, dtype=np.float64) - ego_vel
    pos = np.asarray(center, dtype=np.float64)
    dist = float(np.linalg.norm(pos))
    closing = 0.0 if dist == 0 else float(-(pos @ rel_v) / dist)
    if top_class is ObjectClass.PEDESTRIAN or closing > STATIC_SPEED:
        return InteractionLabel.YIELD
    if top_class is ObjectClass.VEHICLE:
        return InteractionLabel.FOLLOW
    return InteractionLabel.IGNORE


def refine_objects(
    objects: Sequence[TrackedObject],
    assessments: Sequence[ObjectAssessment],
    graph: InteractionGraph,
    ego: EgoState,
    ucfg: UncertaintyConfig,
    model: Optional[BgnnModel] = None,
    seed: int = 0,
) -> list[RefinedEstimate]:
    """Refine each object's class belief and uncertainty from its graph
    neighborhood.

    Class beliefs are pooled over in-edges from object neighbors (the ego
    node carries no class belief).  When a trained model is supplied, the
    per-class predictive std across its MC samples is reported as the
    epistemic spread and its argmax prediction as the interaction label;
    otherwise the label falls back to the kinematic rule and the spread
    is zero.
    """
    by_id = {o.id: o for o in objects}
    assess_by_id = {a.object_id: a for a in assessments}
    prob_std = None
    pred_labels = None
    if model is not None and objects:
        feats = graph_features(objects, assessments, ego)
        samples = []
        for s in range(model.config.mc_samples):
            rng = np.random.default_rng([seed, s])
            values, _ = _sample_layers(model.params, rng)
            logits, _ = _forward(values, graph.attention_matrix(), feats)
            samples.append(_softmax(logits))
        stack = np.stack(samples)
        prob_std = stack.std(axis=0)
        pred_labels = stack.mean(axis=0).argmax(axis=1)
    refined: list[RefinedEstimate] = []
    for row, obj in enumerate(objects):
        a = assess_by_id[obj.id]
        evidence = [
            (by_id[e.src].class_dist, e.attention)
            for e in graph.in_edges(obj.id)
            if e.src != EGO_ID
        ]
        fused = fuse_refine(obj.class_dist, evidence)
        if model is not None and prob_std is not None:
            eps = tuple(float(v) for v in prob_std[row])
            label = list(InteractionLabel)[int(pred_labels[row])]
        else:
            eps = (0.0,) * len(InteractionLabel)
            label = classify_interaction(obj.box.center, obj.velocity,
                                         obj.class_dist.top_class, ego)
        refined.append(
            RefinedEstimate(
                object_id=obj.id,
                refined_class_dist=fused,
                refined_uncertainty=refine_uncertainty(fused, a.deviation, ucfg),
                epistemic_std=eps,
                interaction_label=label,
            )
        )
    return refined


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[list[np.ndarray]] = field(default_factory=list)
    v: list[list[np.ndarray]] = field(default_factory=list)
    t: int = 0


def adam_step(params: Sequence[BayesianLayer], grads: Sequence[LayerGrads],
              state: AdamState, lr: float = 0.01, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    if not state.m:
        state.m = [[np.zeros_like(a) for a in layer.arrays()] for layer in params]
        state.v = [[np.zeros_like(a) for a in layer.arrays()] for layer in params]
    state.t += 1
    for layer, grad, ms, vs in zip(params, grads, state.m, state.v):
        for arr, g, m, v in zip(layer.arrays(), grad.arrays(), ms, vs):
            m += (1 - beta1) * (g - m)
            v += (1 - beta2) * (g * g - v)
            m_hat = m / (1 - beta1 ** state.t)
            v_hat = v / (1 - beta2 ** state.t)
            arr -= lr * m_hat / (np.sqrt(v_hat) + eps)


def training_accuracy(model: BgnnModel,
                      dataset: Sequence[tuple[InteractionGraph, np.ndarray, np.ndarray]]
                      ) -> float:
    """Fraction of labeled nodes predicted correctly by the mean forward pass."""
    correct = total = 0
    for graph, feats, labels in dataset:
        logits = forward_mean(graph, feats, model.params)
        mask = labels >= 0
        pred = logits.argmax(axis=1)
        correct += int((pred[mask] == labels[mask]).sum())
        total += int(mask.sum())
    return correct / total if total else 0.0


def train_bgnn(
    model: BgnnModel,
    dataset: Sequence[tuple[InteractionGraph, np.ndarray, np.ndarray]],
    steps: int = 200,
    lr: float = 0.01,
    seed: int = 0,
    mc_samples: int = 2,
    kl_weight: Optional[float] = None,
) -> list[float]:
    """Full-batch Adam training; returns the per-step loss history."""
    state = AdamState()
    history = []
    for step in range(steps):
        loss, grads = elbo_loss(model.params, dataset, seed=seed * 100003 + step,
                                prior_std=model.config.prior_std,
                                mc_samples=mc_samples, kl_weight=kl_weight)
        adam_step(model.params, grads, state, lr=lr)
        history.append(loss)
    return history


def synthetic_yield_ignore_dataset(
    n_graphs: int,
    seed: int,
    cfg: InteractionConfig,
) -> list[tuple[InteractionGraph, np.ndarray, np.ndarray]]:
    """Linearly separable Yield/Ignore set built from proximity and closing
    speed: near approaching objects are Yield, far receding ones Ignore."""
    from .risk import RiskConfig, assess  # local to avoid cycles at import time

    rng = np.random.default_rng(seed)
    ego = EgoState(heading=0.0, speed=8.0)
    dataset = []
    for k in range(n_graphs):
        is_yield = k % 2 == 0
        if is_yield:
            x = rng.uniform(4.0, 14.0)
            vx = rng.uniform(-9.0, -2.0)
            label = InteractionLabel.YIELD
        else:
            x = rng.uniform(26.0, 40.0)
            vx = rng.uniform(9.0, 16.0)
            label = InteractionLabel.IGNORE
        y = rng.uniform(-1.5, 1.5)
        from .scene import OrientedBox

        obj = TrackedObject(
            id=0,
            box=OrientedBox((x, y, 0.8), 4.5, 1.9, 1.6, 0.0),
            velocity=(vx, 0.0, 0.0),
            class_dist=ClassDistribution.one_hot(ObjectClass.VEHICLE),
        )
        assessments = assess([obj], ego, _empty_cloud(), UncertaintyConfig(), RiskConfig())
        graph = build_graph([obj], ego, cfg)
        feats = graph_features([obj], assessments, ego)
        labels = np.array([label.index, -1])
        dataset.append((graph, feats, labels))
    return dataset


def _empty_cloud():
    from .scene import PointCloud

    return PointCloud()


# ---------------------------------------------------------------------------
# Parameter serialization
# ---------------------------------------------------------------------------


def save_model(model: BgnnModel, path: str | Path) -> None:
    """Write parameters to the flat binary format plus a JSON sidecar.

    Binary layout: 8-byte magic, uint32 layer count, then per layer two
    uint32 dims (out, in), then all layer tensors as little-endian float64
    row-major in order (weight means, weight log-stds, bias means, bias
    log-stds per layer).
    """
    path = Path(path)
    header = MODEL_MAGIC + struct.pack("<I", len(model.params))
    for layer in model.params:
        header += struct.pack("<II", layer.out_dim, layer.in_dim)
    body = b"".join(a.astype("<f8").tobytes() for layer in model.params
                    for a in layer.arrays())
    path.write_bytes(header + body)
    cfg = model.config
    sidecar = {
        "in_dim": model.in_dim,
        "out_dim": model.out_dim,
        "config": {
            "edge_radius": cfg.edge_radius,
            "w_distance": cfg.w_distance,
            "w_speed": cfg.w_speed,
            "w_intensity": cfg.w_intensity,
            "layers": cfg.layers,
            "embed_dim": cfg.embed_dim,
            "mc_samples": cfg.mc_samples,
            "prior_std": cfg.prior_std,
            "attention_positive_energy": cfg.attention_positive_energy,
        },
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_model(path: str | Path) -> BgnnModel:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MODEL_MAGIC:
        raise ValueError(f"not a model file: {path}")
    (n_layers,) = struct.unpack("<I", raw[8:12])
    dims = []
    pos = 12
    for _ in range(n_layers):
        out_dim, in_dim = struct.unpack("<II", raw[pos : pos + 8])
        dims.append((out_dim, in_dim))
        pos += 8
    layers = []
    for out_dim, in_dim in dims:
        arrays = []
        for shape in ((out_dim, in_dim), (out_dim, in_dim), (out_dim,), (out_dim,)):
            count = int(np.prod(shape))
            arr = np.frombuffer(raw, dtype="<f8", offset=pos, count=count).reshape(shape)
            arrays.append(arr.astype(np.float64))
            pos += count * 8
        layers.append(BayesianLayer(*arrays))
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    cfg = InteractionConfig(**sidecar["config"])
    return BgnnModel(cfg, sidecar["in_dim"], sidecar["out_dim"], layers)
