"""Tunable parameters and the ``key = value`` file format shared by config and
scenario files.

Files are INI-style: ``[section]`` headers followed by ``key = value`` lines.
A config key ``fit.step_tol`` lives under ``[fit]`` as ``step_tol``.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    """Raised for unknown keys or unparsable values in a config file."""


@dataclass
class InitConfig:
    max_x: float = 20.0
    gap_threshold: float = 1.0
    min_cluster_size: int = 5
    cluster_half_width: float = 1.0


@dataclass
class PredictConfig:
    cull_behind: float = -5.0
    min_segment_span: float = 0.1


@dataclass
class AssocConfig:
    gate_chi2: float = math.inf
    euclid_gate: float = 2.0
    spawn_min_separation: float = 1.5
    range_decay: float = 10.0
    spawn_grace: int = 5
    forget_factor: float = 0.95


@dataclass
class ModelConfig:
    max_segment_len: float = 50.0
    min_segment_len: float = 10.0


@dataclass
class FitConfig:
    step_tol: float = 1e-6
    max_iters: int = 20
    damping_init: float = 1e-6
    damping_max: float = 1e2
    cond_max: float = 1e12
    odo_sigma_y: float = 0.02
    odo_sigma_theta: float = 0.002
    prior_margin: float = 5.0


@dataclass
class EMConfig:
    max_iters: int = 10


@dataclass
class EvalConfig:
    bin_width: float = 10.0
    match_gate: float = 1.0
    max_x: float = math.inf


@dataclass
class Config:
    init: InitConfig = field(default_factory=InitConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)
    assoc: AssocConfig = field(default_factory=AssocConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    em: EMConfig = field(default_factory=EMConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def updated(self, overrides: Mapping[str, Any]) -> "Config":
        """Return a copy with dotted-key overrides applied, e.g.
        ``{"model.max_segment_len": 30}``. String values are coerced."""
        new = dataclasses.replace(
            self, **{f.name: dataclasses.replace(getattr(self, f.name))
                     for f in dataclasses.fields(self)})
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            sub = getattr(new, section, None)
            if sub is None or not name or name not in _field_types(sub):
                raise ConfigError(f"unknown config key {key!r}")
            setattr(sub, name, _coerce(_field_types(sub)[name], value, key))
        return new

    def as_flat_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            for k, v in dataclasses.asdict(getattr(self, f.name)).items():
                out[f"{f.name}.{k}"] = v
        return out


def _field_types(obj) -> dict[str, type]:
    return {f.name: type(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def _coerce(kind: type, value: Any, key: str):
    if not isinstance(value, str):
        return kind(value)
    try:
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        if kind is bool:
            return value.strip().lower() in ("1", "true", "yes", "on")
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    return value


def read_sections(path: str | Path) -> dict[str, dict[str, str]]:
    """Parse a ``key = value`` sections file into nested dicts, keeping
    section order."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return {name: dict(parser[name]) for name in parser.sections()}


def load_config(path: str | Path | None = None) -> Config:
    """Load a config file; missing keys keep their defaults."""
    if path is None:
        return Config()
    flat = {f"{sec}.{k}": v for sec, items in read_sections(path).items()
            for k, v in items.items()}
    return Config().updated(flat)


def write_config(config: Config, path: str | Path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for f in dataclasses.fields(config):
        parser[f.name] = {k: repr(v) if isinstance(v, float) else str(v)
                          for k, v in dataclasses.asdict(getattr(config, f.name)).items()}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
