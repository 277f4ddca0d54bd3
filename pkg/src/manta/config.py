"""Run configuration: one JSON document with a section per module.

```
{
  "seed": 0,
  "secondary": true,
  "motion": {"iou_threshold": 0.3, "max_age": 30, ...},
  "association": {"theta_cos": 0.9, "reacquire_floor": 0.5, ...},
  "metrics": {"tau_c": 0.2, ...},
  "embedder": {"kind": "handcrafted", "projection": null, ...},
  "physics": {"depth_scale": 10.0, "background": [0.6, 0.8, 0.9]}
}
```

Unknown keys are errors. The effective configuration is echoed next to any
run output.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from manta.association import SearchConfig
from manta.embedder import EmbedderConfig
from manta.metrics import MetricConfig
from manta.motion import TrackerConfig
from manta.physics import DEFAULT_BACKGROUND

SEED_ENV = "MANTA_SEED"


class ConfigError(ValueError):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from exc


@dataclass(frozen=True)
class PhysicsConfig:
    depth_scale: float = 10.0
    background: tuple[float, float, float] = DEFAULT_BACKGROUND


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    secondary: bool = True
    motion: TrackerConfig = field(default_factory=TrackerConfig)
    association: SearchConfig = field(default_factory=SearchConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    projection: str | None = None
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "seed": self.seed,
            "secondary": self.secondary,
            "motion": asdict(self.motion),
            "association": asdict(self.association),
            "metrics": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.metrics).items()},
            "embedder": dict(asdict(self.embedder), projection=self.projection),
            "physics": {"depth_scale": self.physics.depth_scale, "background": list(self.physics.background)},
        }
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_SECTIONS = {
    "motion": TrackerConfig,
    "association": SearchConfig,
    "metrics": MetricConfig,
    "embedder": EmbedderConfig,
    "physics": PhysicsConfig,
}


def _build(cls, section: str, values: dict) -> Any:
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    coerced = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def from_dict(data: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    base = base or PipelineConfig(seed=default_seed())
    unknown = set(data) - {"seed", "secondary", *list(_SECTIONS)}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    kw: dict[str, Any] = {}
    if "seed" in data:
        kw["seed"] = int(data["seed"])
    if "secondary" in data:
        kw["secondary"] = bool(data["secondary"])
    for section, cls in _SECTIONS.items():
        if section not in data:
            continue
        values = dict(data[section])
        if section == "embedder":
            kw["projection"] = values.pop("projection", base.projection)
        current = asdict(getattr(base, section))
        current.update(values)
        kw[section] = _build(cls, section, current)
    return replace(base, **kw)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig(seed=default_seed())
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(data)


def override(cfg: PipelineConfig, section: str, **values) -> PipelineConfig:
    """Replace keys of one section, ignoring ``None`` values (unset CLI flags)."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    return replace(cfg, **{section: replace(getattr(cfg, section), **values)})
