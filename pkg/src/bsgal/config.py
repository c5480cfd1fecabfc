"""Experiment configuration files.

A config is a TOML document with a ``schema_version`` key, a few top-level
keys (``name``, ``output_dir``, ``seeds``) and one table per subsystem:
``[world]``, ``[model]``, ``[run]``, ``[gate]``, ``[estimator]``. Unknown
keys anywhere are rejected. Missing keys take the library defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .datastream import WorldConfig
from .model import ClassifierConfig
from .trainer import ConfigError, EstimatorConfig, GateConfig, RunConfig, TrainSetup
from . import io

SCHEMA_VERSION = 1
SECTIONS = {
    "world": WorldConfig,
    "model": ClassifierConfig,
    "run": RunConfig,
    "gate": GateConfig,
    "estimator": EstimatorConfig,
}
TOP_LEVEL = ("schema_version", "name", "output_dir", "seeds")


@dataclass
class ExperimentConfig:
    name: str = "default"
    output_dir: str = "runs"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    setup: TrainSetup = field(default_factory=TrainSetup)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "output_dir": self.output_dir,
            "seeds": list(self.seeds),
            **self.setup.to_dict(),
        }

    def canonical_json(self) -> str:
        return io.dumps(self.to_dict())

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Same experiment with the run seed and the init seed both set to ``seed``."""
        s = self.setup
        setup = dataclasses.replace(
            s, run=dataclasses.replace(s.run, seed=seed), model=dataclasses.replace(s.model, seed=seed))
        return dataclasses.replace(self, setup=setup)


def _coerce(section: str, key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be a boolean")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key} must be a number")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{key} must be an integer")
        return value
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{section}.{key} must be a string")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{section}.{key} must be a list")
    return value


def _build_section(name: str, cls, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    kwargs = {k: _coerce(name, k, v, getattr(defaults, k)) for k, v in values.items()}
    try:
        return dataclasses.replace(defaults, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    unknown = sorted(set(data) - set(TOP_LEVEL) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    parts = {name: _build_section(name, cls, data.get(name, {})) for name, cls in SECTIONS.items()}
    seeds = data.get("seeds", [0, 1, 2, 3, 4])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers")
    cfg = ExperimentConfig(
        name=str(data.get("name", "default")),
        output_dir=str(data.get("output_dir", "runs")),
        seeds=seeds,
        setup=TrainSetup(**parts),
    )
    cfg.setup.validate()
    return cfg


def parse_value(text: str):
    """Interpret an override value as a TOML literal, falling back to a string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        value = parse_value(raw.strip())
        parts = key.strip().split(".")
        if len(parts) == 1:
            data[parts[0]] = value
        elif len(parts) == 2:
            data.setdefault(parts[0], {})
            if not isinstance(data[parts[0]], dict):
                raise ConfigError(f"{parts[0]} is not a table")
            data[parts[0]][parts[1]] = value
        else:
            raise ConfigError(f"override key {key!r} nests too deeply")
    return data


def load(path, overrides: list[str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(apply_overrides(data, overrides or []))


def default_toml() -> str:
    """The defaults rendered as a TOML document (used by ``bsgal init``)."""
    lines = [f"schema_version = {SCHEMA_VERSION}", 'name = "default"', 'output_dir = "runs"',
             "seeds = [0, 1, 2, 3, 4]", ""]
    for name, cls in SECTIONS.items():
        lines.append(f"[{name}]")
        for f in dataclasses.fields(cls):
            value = getattr(cls(), f.name)
            if value is None:
                lines.append(f"# {f.name} =  (unset)")
            else:
                lines.append(f"{f.name} = {_toml_literal(value)}")
        lines.append("")
    return "\n".join(lines)


def _toml_literal(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(_toml_literal(v) for v in value) + "]"
    return str(value)
