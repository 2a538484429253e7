"""Run configuration: every tunable of the pipeline in one validated record.

Config files are JSON objects mirroring :class:`RunConfig`::

    {
      "frames": 8,
      "solver": {"lam": 0.2, "multiplier_step_mode": "standard"},
      "noise": {"inner": 9},
      "registration": {"max_translation": 10},
      "synth": {"seed": 3}
    }

Missing keys keep their defaults. Unknown keys and ill-typed values are
rejected with a :class:`ConfigError` naming the dotted field.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError, ParameterError
from .noise import NoiseOptions
from .registration import RegistrationOptions
from .solver import SolverParams


@dataclass(frozen=True)
class SynthConfig:
    """Fixture generation: a retina-like phantom under Gamma speckle and rigid jitter."""

    size: int = 128
    frames: int = 8
    looks: float = 4.0
    seed: int = 0
    max_translation: float = 5.0
    max_rotation: float = 2.0
    # the phantom is rendered this many pixels larger on every side and
    # cropped after warping so no frame contains replicated border content
    margin: int = 10
    bit_depth: int = 8

    def __post_init__(self):
        if self.size < 16:
            raise ParameterError("synth size must be >= 16")
        if self.bit_depth not in (8, 16):
            raise ParameterError("synth bit_depth must be 8 or 16")


@dataclass(frozen=True)
class RunConfig:
    # number of leading manifest frames to use
    frames: int = 8
    # registration target; None picks the middle of the selected frames
    reference_index: int | None = None
    bias_correction: bool = True
    image_format: str = "pgm"
    solver: SolverParams = field(default_factory=SolverParams)
    noise: NoiseOptions = field(default_factory=NoiseOptions)
    registration: RegistrationOptions = field(default_factory=RegistrationOptions)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.frames < 2:
            raise ConfigError("frames", "must be >= 2")
        if self.reference_index is not None and not 0 <= self.reference_index < self.frames:
            raise ConfigError("reference_index", f"must lie in [0, {self.frames})")
        if self.image_format not in ("pgm", "png"):
            raise ConfigError("image_format", "must be 'pgm' or 'png'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, "")


def _check_type(name: str, default: Any, value: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(name, f"expected a string, got {value!r}")
    elif default is None:
        # only reference_index is optional, and it is an integer
        if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(name, f"expected an integer or null, got {value!r}")
    return value


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected an object")
    defaults = cls()
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = prefix + key
        if key not in fields:
            raise ConfigError(name, "unknown field")
        default = getattr(defaults, key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, name + ".")
        else:
            kwargs[key] = _check_type(name, default, value)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ParameterError as exc:
        raise ConfigError(prefix.rstrip(".") or "<root>", str(exc)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON in {path} ({exc})") from exc
    return RunConfig.from_dict(data)


def apply_overrides(config: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Return ``config`` with dotted-key ``overrides`` applied and revalidated."""
    data = config.to_dict()
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = data
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(dotted, "unknown field")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(dotted, "unknown field")
        node[parts[-1]] = value
    return RunConfig.from_dict(data)


def parse_assignment(text: str) -> tuple[str, Any]:
    """Parse ``key=value``; the value is read as JSON, falling back to a bare string."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(text, "override must look like section.key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value
