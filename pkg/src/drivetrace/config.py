"""Pipeline configuration: one JSON document covering every stage.

Unknown keys are rejected at load time and every sub-config validates its
own invariants, so a bad config fails fast rather than mid-run.  The
environment variable ``PRIME_CONFIG`` names a fallback config file used
when no ``--config`` flag is given.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .detector import ClusterParams, NoiseModel
from .interaction import InteractionConfig
from .preprocess import NormalizationConfig
from .reasoner import ReasonerConfig
from .risk import RiskConfig, UncertaintyConfig

ENV_CONFIG = "PRIME_CONFIG"

_SECTIONS = {
    "normalization": NormalizationConfig,
    "cluster": ClusterParams,
    "noise": NoiseModel,
    "uncertainty": UncertaintyConfig,
    "risk": RiskConfig,
    "interaction": InteractionConfig,
    "reasoner": ReasonerConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    normalization: NormalizationConfig = field(default_factory=NormalizationConfig)
    cluster: ClusterParams = field(default_factory=ClusterParams)
    noise: NoiseModel = field(default_factory=NoiseModel)
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    risk: RiskConfig = field(default_factory=RiskConfig)
    interaction: InteractionConfig = field(default_factory=InteractionConfig)
    reasoner: ReasonerConfig = field(default_factory=ReasonerConfig)
    detector: str = "oracle"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.detector not in ("oracle", "geometric"):
            raise ValueError(f"detector must be 'oracle' or 'geometric', got {self.detector!r}")


def _section_from_dict(cls: type, data: dict[str, Any], section: str) -> Any:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict[str, Any]) -> PipelineConfig:
    known = set(_SECTIONS) | {"detector", "seed"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for section, cls in _SECTIONS.items():
        if section in data:
            kwargs[section] = _section_from_dict(cls, data[section], section)
    if "detector" in data:
        kwargs["detector"] = data["detector"]
    if "seed" in data:
        kwargs["seed"] = data["seed"]
    return PipelineConfig(**kwargs)


def config_to_dict(config: PipelineConfig) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for section, cls in _SECTIONS.items():
        sub = getattr(config, section)
        out[section] = {f.name: _plain(getattr(sub, f.name)) for f in dataclasses.fields(cls)}
    out["detector"] = config.detector
    out["seed"] = config.seed
    return out


def _plain(v: Any) -> Any:
    if isinstance(v, (bool, int, float, str)) or v is None:
        return v
    return float(v)


def load_config(path: Optional[str | Path] = None, seed: Optional[int] = None) -> PipelineConfig:
    """Load a config file, or defaults when none is given.

    Resolution order: explicit path, then $PRIME_CONFIG, then built-in
    defaults.  ``seed`` overrides the file's seed when provided.
    """
    if path is None:
        env = os.environ.get(ENV_CONFIG)
        path = env if env else None
    if path is None:
        config = PipelineConfig()
    else:
        config = config_from_dict(json.loads(Path(path).read_text()))
    if seed is not None:
        config = dataclasses.replace(config, seed=seed)
    return config


def save_config(config: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n")
