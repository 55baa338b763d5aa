"""Run configuration: a JSON document with one section per pipeline stage.

Schema (every key optional; defaults shown by ``stylesynth show-config``)::

    {
      "seed": 0,
      "output_dir": "runs/default",
      "mode": "batstyler",
      "model_name": null,
      "feature_cache": null,
      "backend":    {EncoderSpec fields},
      "categories": {"path": null, "names": null, "synthetic_n": 20, "synthetic_groups": 4},
      "csg":        {CsgConfig fields},
      "style":      {StyleTrainConfig fields},
      "baseline":   {"lam": 1.0},
      "classifier": {ClassifierConfig fields},
      "evaluation": {"manifest": null, "domains": {"clean": 0.0, "shifted": 0.2}, "per_class": 5},
      "sweep":      {"n_values": [5, 50, 200], "seeds": 5, "lams": [0.1, 1.0], "repeats": 3}
    }

Any leaf can be overridden on the command line with ``--section.key=value``
(or ``--key=value`` when the key name is unique). Values are parsed as JSON
and fall back to plain strings.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .classifier import ClassifierConfig
from .encoders import EncoderSpec
from .errors import ConfigError, MissingInputError
from .semantics import CategorySet, CsgConfig, synthetic_categories
from .style_trainer import BaselineLossConfig, StyleTrainConfig


@dataclass
class CategorySource:
    path: str | None = None
    names: list | None = None
    synthetic_n: int = 20
    synthetic_groups: int = 4

    def load(self, seed: int = 0) -> CategorySet:
        if self.names:
            return CategorySet(self.names)
        if self.path:
            return CategorySet.from_file(self.path)
        names, _ = synthetic_categories(self.synthetic_n, self.synthetic_groups, seed)
        return CategorySet(names)


@dataclass
class EvalConfig:
    manifest: str | None = None
    domains: dict = field(default_factory=lambda: {"clean": 0.0, "shifted": 0.2})
    per_class: int = 5


@dataclass
class SweepConfig:
    n_values: list = field(default_factory=lambda: [5, 50, 200])
    seeds: int = 5
    lams: list = field(default_factory=lambda: [0.1, 1.0])
    repeats: int = 3


SECTIONS = {
    "backend": EncoderSpec,
    "categories": CategorySource,
    "csg": CsgConfig,
    "style": StyleTrainConfig,
    "baseline": BaselineLossConfig,
    "classifier": ClassifierConfig,
    "evaluation": EvalConfig,
    "sweep": SweepConfig,
}
TOP_LEVEL = {"seed": 0, "output_dir": "runs/default", "mode": "batstyler",
             "model_name": None, "feature_cache": None}


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    mode: str = "batstyler"
    model_name: str | None = None
    feature_cache: str | None = None
    backend: EncoderSpec = field(default_factory=EncoderSpec)
    categories: CategorySource = field(default_factory=CategorySource)
    csg: CsgConfig = field(default_factory=CsgConfig)
    style: StyleTrainConfig = field(default_factory=StyleTrainConfig)
    baseline: BaselineLossConfig = field(default_factory=BaselineLossConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def fingerprint(self) -> str:
        """Hash of everything that can change results; output and cache paths are left out."""
        data = self.to_dict()
        data.pop("output_dir")
        data.pop("feature_cache")
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]

    def validate(self):
        self.style.validate()
        self.baseline.validate()
        self.classifier.validate()
        self.csg.validate()
        return self

    def write(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "run_config.json"
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        kwargs = {}
        for key in list(data):
            if key in TOP_LEVEL:
                kwargs[key] = data.pop(key)
        for name, klass in SECTIONS.items():
            section = data.pop(name, None) or {}
            kwargs[name] = _build(klass, section, name)
        if data:
            raise ConfigError(f"unknown config keys: {sorted(data)}", stage="config")
        return cls(**kwargs)

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        data = {}
        if path:
            path = Path(path)
            if not path.exists():
                raise MissingInputError("config file not found", stage="config", path=str(path))
            try:
                data = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}", stage="config",
                                  path=str(path)) from exc
        for item in overrides:
            apply_override(data, item)
        return cls.from_dict(data)


def _build(klass, section: dict, name: str):
    names = {f.name for f in dataclasses.fields(klass)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}", stage="config")
    section = dict(section)
    for key in ("image_mean", "image_std"):
        if key in section and isinstance(section[key], list):
            section[key] = tuple(section[key])
    try:
        return klass(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [{name}] section: {exc}", stage="config") from exc


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _resolve_key(key: str) -> tuple[str | None, str]:
    if "." in key:
        section, leaf = key.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}", stage="config")
        return section, leaf
    if key in TOP_LEVEL:
        return None, key
    owners = [s for s, k in SECTIONS.items() if key in {f.name for f in dataclasses.fields(k)}]
    if len(owners) != 1:
        what = "ambiguous" if owners else "unknown"
        raise ConfigError(f"{what} config key {key!r}; use section.key", stage="config")
    return owners[0], key


def apply_override(data: dict, item: str) -> dict:
    """Apply one ``key=value`` (leading dashes allowed) to a raw config dict."""
    item = item.lstrip("-")
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value", stage="config")
    key, value = item.split("=", 1)
    section, leaf = _resolve_key(key.replace("-", "_"))
    if section is None:
        data[leaf] = _parse_value(value)
    else:
        data.setdefault(section, {})[leaf] = _parse_value(value)
    return data
