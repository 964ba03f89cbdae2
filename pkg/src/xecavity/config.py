"""Run configuration: JSON file plus ``section.key=value`` overrides.

Every section mirrors one of the parameter dataclasses; keys left out keep
their defaults and unknown keys are rejected. Example::

    {
      "catalog": null,
      "cavity": {"length": 2.4983},
      "medium": {"metastable_density": 1.8347e6,
                 "broadening": {"natural_fwhm": 334.39},
                 "model": {"kind": "velocity_selective"}},
      "plan": {"probe_powers": [5e-10, 2e-9, 1.9e-8], "seed": 7},
      "output": {"directory": "out"}
    }

``catalog`` is a path to a catalog JSON file (relative to the config file),
or null for the shipped natural-xenon catalog.
"""
from __future__ import annotations

import copy
import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import LineCatalog, default_catalog, read_catalog
from .cavity import CavitySpec
from .errors import ConfigError, ValidationError
from .medium import MediumParams
from .protocol import ScanPlan


@dataclass(frozen=True)
class OutputPaths:
    directory: str = "."
    prefix: str = "trace"
    plot_script: bool = True


@dataclass(frozen=True)
class RunConfig:
    catalog: str | None = None
    cavity: CavitySpec = field(default_factory=CavitySpec)
    medium: MediumParams = field(default_factory=MediumParams)
    plan: ScanPlan = field(default_factory=ScanPlan)
    output: OutputPaths = field(default_factory=OutputPaths)
    base_dir: str = field(default=".", compare=False, repr=False)

    def __post_init__(self):
        if self.catalog is not None and not self.catalog_path().is_file():
            raise ConfigError(f"file not found: {self.catalog_path()}", "catalog")

    def catalog_path(self):
        return None if self.catalog is None else Path(self.base_dir) / self.catalog

    def load_catalog(self) -> LineCatalog:
        if self.catalog is None:
            return default_catalog()
        return read_catalog(self.catalog_path())


_SECTIONS = {"cavity": CavitySpec, "medium": MediumParams, "plan": ScanPlan,
             "output": OutputPaths}


def _nested_type(f):
    factory = f.default_factory
    return factory if dataclasses.is_dataclass(factory) else None


def _build(cls, data, loc):
    if not isinstance(data, dict):
        raise ConfigError("expected an object", loc)
    names = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}", loc)
    kwargs = {}
    for key, value in data.items():
        sub = _nested_type(names[key])
        if sub is not None:
            kwargs[key] = _build(sub, value, f"{loc}.{key}")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ValidationError as exc:
        raise ConfigError(str(exc), None if exc.location else loc) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value: {exc}", loc) from None


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name))
                for f in dataclasses.fields(obj) if f.init}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def config_to_dict(cfg: RunConfig) -> dict:
    out = _plain(cfg)
    out.pop("base_dir")
    return out


def apply_override(data: dict, assignment: str):
    """Apply ``section.key=value`` to a config dict in place.

    The value is parsed as JSON when possible, otherwise kept as a string.
    """
    path, sep, raw = assignment.partition("=")
    if not sep or not path:
        raise ConfigError(f"override must look like section.key=value, got {assignment!r}",
                          "--set")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = path.strip().split(".")
    node = data
    for k in keys[:-1]:
        nxt = node.get(k)
        if nxt is None:
            nxt = node[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"{k} is not a section", path)
        node = nxt
    node[keys[-1]] = value


def build_config(data: dict, base_dir=".") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", "config")
    unknown = sorted(set(data) - set(_SECTIONS) - {"catalog"})
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}", "config")
    kwargs = {name: _build(cls, data[name], name)
              for name, cls in _SECTIONS.items() if name in data}
    catalog = data.get("catalog")
    if catalog is not None and not isinstance(catalog, str):
        raise ConfigError("must be a path string or null", "catalog")
    return RunConfig(catalog=catalog, base_dir=str(base_dir), **kwargs)


def load_config(path=None, overrides=()) -> RunConfig:
    """Config from a JSON file (or defaults when ``path`` is None) plus overrides."""
    data, base = {}, "."
    if path is not None:
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, f"{path}: line {exc.lineno}, column {exc.colno}") from None
        base = path.parent
    data = copy.deepcopy(data)
    for item in overrides:
        apply_override(data, item)
    return build_config(data, base)
