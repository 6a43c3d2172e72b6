"""Command-line interface wiring the pipeline stages together.

Every command takes ``--config <file>`` (JSON; falls back to the
$PRIME_CONFIG environment variable, then to built-in defaults),
``--seed <n>`` and ``--out <dir>``, writes all artifacts under the output
directory, and is deterministic for a fixed config and seed.  Exit codes:
0 success, 1 runtime failure, 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .config import PipelineConfig, load_config, save_config
from .evaluate import evaluate_suite, parse_csv, result_to_dict, write_report
from .interaction import (
    BgnnModel,
    InteractionConfig,
    load_model,
    save_model,
    synthetic_yield_ignore_dataset,
    train_bgnn,
    training_accuracy,
)
from .pipeline import run_scene
from .reasoner import format_trace, trace_to_dict
from .risk import assessment_to_dict
from .scenario import ScenarioSpec, Template, generate
from .scene_io import load_scene, save_scene


def _dump(payload, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args) -> PipelineConfig:
    return load_config(args.config, seed=args.seed)


def _scene_result(args, config: PipelineConfig):
    scene = load_scene(args.scene)
    model = load_model(args.model) if getattr(args, "model", None) else None
    return run_scene(scene, config, model)


def cmd_generate(args) -> int:
    out = _out_dir(args)
    config = _load(args)
    templates = [Template(t) for t in args.template.split(",")]
    entries = []
    for template in templates:
        for k in range(args.count):
            seed = (args.seed or 0) + k
            spec = ScenarioSpec(template=template, seed=seed,
                                n_objects=args.n_objects,
                                noise_std=args.noise_std,
                                points_per_m2=args.density)
            scene = generate(spec)
            name = f"scene_{template.value}_{seed:04d}.json"
            save_scene(scene, out / name, cloud_format=args.cloud_format)
            entries.append({"path": name, "template": template.value, "seed": seed})
    _dump({"scenes": entries}, out / "manifest.json")
    save_config(config, out / "config.json")
    print(f"wrote {len(entries)} scenes to {out}")
    return 0


def cmd_detect(args) -> int:
    out = _out_dir(args)
    config = _load(args)
    result = _scene_result(args, config)
    payload = [
        {
            "id": o.id,
            "box": {"center": list(o.box.center), "length": o.box.length,
                    "width": o.box.width, "height": o.box.height, "yaw": o.box.yaw},
            "velocity": list(o.velocity),
            "class_probs": list(o.class_dist.probs),
            "support_points": list(o.support_points),
        }
        for o in result.detections
    ]
    _dump(payload, out / "detections.json")
    print(f"{len(payload)} detections -> {out / 'detections.json'}")
    return 0


def cmd_assess(args) -> int:
    out = _out_dir(args)
    config = _load(args)
    result = _scene_result(args, config)
    _dump([assessment_to_dict(a) for a in result.assessments], out / "assessments.json")
    print(f"{len(result.assessments)} assessments -> {out / 'assessments.json'}")
    return 0


def cmd_graph(args) -> int:
    out = _out_dir(args)
    config = _load(args)
    result = _scene_result(args, config)
    payload = {
        "nodes": list(result.graph.node_ids),
        "edges": [
            {
                "src": e.src,
                "dst": e.dst,
                "distance": e.distance,
                "speed_diff": e.speed_diff,
                "intensity": e.intensity,
                "energy": e.energy,
                "attention": e.attention,
            }
            for e in result.graph.edges
        ],
        "refined": [
            {
                "object_id": r.object_id,
                "refined_class_probs": list(r.refined_class_dist.probs),
                "refined_uncertainty": r.refined_uncertainty,
                "epistemic_std": list(r.epistemic_std),
                "interaction_label": r.interaction_label.value,
            }
            for r in result.refined
        ],
    }
    _dump(payload, out / "graph.json")
    print(f"graph with {len(result.graph.edges)} edges -> {out / 'graph.json'}")
    return 0


def cmd_reason(args) -> int:
    out = _out_dir(args)
    config = _load(args)
    result = _scene_result(args, config)
    _dump(trace_to_dict(result.trace), out / "trace.json")
    print(f"{result.trace.speed.value} / {result.trace.path.value} "
          f"-> {out / 'trace.json'}")
    return 0


def cmd_trace(args) -> int:
    out = _out_dir(args)
    config = _load(args)
    result = _scene_result(args, config)
    text = format_trace(result.trace)
    (out / "trace.txt").write_text(text + "\n")
    print(text)
    return 0


def cmd_train_bgnn(args) -> int:
    out = _out_dir(args)
    config = _load(args)
    icfg = config.interaction
    if args.embed_dim:
        icfg = replace(icfg, embed_dim=args.embed_dim)
    model = BgnnModel.initialize(icfg, seed=config.seed)
    dataset = synthetic_yield_ignore_dataset(args.samples, config.seed, icfg)
    history = train_bgnn(model, dataset, steps=args.steps, lr=args.lr,
                         seed=config.seed)
    accuracy = training_accuracy(model, dataset)
    save_model(model, out / "model.bin")
    _dump({"steps": args.steps, "final_loss": history[-1], "accuracy": accuracy},
          out / "training.json")
    print(f"trained {args.steps} steps, accuracy {accuracy:.3f} -> {out / 'model.bin'}")
    return 0


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    config = _load(args)
    model = load_model(args.model) if args.model else None
    result, records = evaluate_suite(args.manifest, config, jobs=args.jobs, model=model)
    write_report(result, out)
    _dump(result_to_dict(result), out / "result.json")
    _dump(
        [
            {
                "path": r.path,
                "template": r.template,
                "expected_speed": r.expected_speed,
                "predicted_speed": r.predicted_speed,
                "expected_path": r.expected_path,
                "predicted_path": r.predicted_path,
                "error": r.error,
            }
            for r in records
        ],
        out / "scenes.json",
    )
    errors = result.counts.get("errors", 0)
    print((out / "report.txt").read_text())
    if errors:
        print(f"{errors} scene(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    out = _out_dir(args)
    result = parse_csv(Path(args.csv).read_text())
    paths = write_report(result, out, prefix=args.prefix)
    print("\n".join(str(p) for p in paths))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivetrace",
        description="LiDAR scene risk assessment with interpretable decision traces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="pipeline config JSON (default: $PRIME_CONFIG or builtin)")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("generate", help="generate synthetic scenario scenes")
    common(p)
    p.add_argument("--template", required=True,
                   help="comma-separated template names "
                        f"({','.join(t.value for t in Template)})")
    p.add_argument("--count", type=int, default=1, help="scenes per template")
    p.add_argument("--density", type=float, default=50.0, help="surface points per m^2")
    p.add_argument("--noise-std", type=float, default=0.02, help="range noise std (m)")
    p.add_argument("--n-objects", type=int, default=4, help="extra objects (dense traffic)")
    p.add_argument("--cloud-format", choices=("ascii", "binary"), default="ascii")
    p.set_defaults(func=cmd_generate)

    for name, func, needs_model in (
        ("detect", cmd_detect, True),
        ("assess", cmd_assess, True),
        ("graph", cmd_graph, True),
        ("reason", cmd_reason, True),
        ("trace", cmd_trace, True),
    ):
        p = sub.add_parser(name, help=f"run the pipeline and write {name} output")
        common(p)
        p.add_argument("--scene", required=True, help="scene JSON file")
        if needs_model:
            p.add_argument("--model", help="trained BGNN parameter file")
        p.set_defaults(func=func)

    p = sub.add_parser("train-bgnn", help="train the interaction BGNN on synthetic labels")
    common(p)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--samples", type=int, default=128, help="training graphs")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--embed-dim", type=int, default=None,
                   help="override config embed_dim (smaller is faster)")
    p.set_defaults(func=cmd_train_bgnn)

    p = sub.add_parser("evaluate", help="run a scenario suite and report metrics")
    common(p)
    p.add_argument("--manifest", required=True, help="suite manifest JSON")
    p.add_argument("--jobs", type=int, default=1, help="parallel scene workers")
    p.add_argument("--model", help="trained BGNN parameter file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="re-render reports from a result CSV")
    common(p)
    p.add_argument("--csv", required=True, help="report.csv from a previous evaluate")
    p.add_argument("--prefix", default="report")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
