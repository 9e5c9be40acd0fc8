"""Run configuration shared by the CLI subcommands.

Defaults can come from a JSON file (``--config``); explicit flags win over
the file. ``FACADE_ANOMALY_OUT`` is the only environment override: when set,
relative output paths are resolved against it.
"""

from __future__ import annotations

import json
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .frames import KNOWN_CONDITIONS, ConditionTag
from .model import PRESETS, TrainingConfig

OUT_ENV = "FACADE_ANOMALY_OUT"


@dataclass(frozen=True)
class ToyProfile:
    resolution: int = 128
    scale: float = 0.25
    epochs: int = 15


TOY = ToyProfile()


@dataclass
class RunConfig:
    seed: int = 7
    tolerance: float = 1.0
    f_mode: str = "identity"
    scale: float = 1.0
    resolution: int = 512
    min_area: int = 20
    bin_width: float = 0.25
    worst_k: int = 5
    toy: bool = False
    presets: dict = field(default_factory=lambda: {k: asdict(v) for k, v in PRESETS.items()})
    conditions: dict = field(default_factory=lambda: {k: c.to_dict() for k, c in KNOWN_CONDITIONS.items()})

    def __post_init__(self):
        if self.f_mode not in ("identity", "absolute"):
            raise ConfigError(f"f-mode must be 'identity' or 'absolute', got {self.f_mode!r}")

    def apply_toy(self) -> "RunConfig":
        return replace(self, toy=True, scale=TOY.scale, resolution=TOY.resolution)

    def training_config(self, preset: str, **overrides) -> TrainingConfig:
        try:
            base = dict(self.presets[preset])
        except KeyError:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(self.presets)}") from None
        base["seed"] = self.seed
        if self.toy:
            base["epochs"] = TOY.epochs
        base.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return TrainingConfig(**base)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid training configuration: {exc}") from exc

    def condition(self, name: str, t_out: Optional[float] = None) -> ConditionTag:
        known = self.conditions.get(name.lower())
        if t_out is None:
            if known is None:
                raise ConfigError(f"condition {name!r} is not a preset; pass --t-out")
            return ConditionTag.from_dict(known)
        label = known["name"] if known else name
        return ConditionTag(label, float(t_out))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def resolve_out(path) -> Path:
    path = Path(path)
    root = os.environ.get(OUT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def write_snapshot(path, command: str, config: RunConfig, args: dict, extra: Optional[dict] = None) -> Path:
    """Resolved configuration of one CLI invocation, written next to its outputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    snap = {
        "command": command,
        "config": asdict(config),
        "arguments": {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(args.items())},
        "python": sys.version.split()[0],
        "platform": platform.platform(),
    }
    if extra:
        snap.update(extra)
    path.write_text(json.dumps(snap, indent=2, sort_keys=True, default=str) + "\n")
    return path
