"""Experiment files: a TOML tree with sections train, model, anneal, ggal, dataset, protocol, output.

Loading rejects unknown keys and fills every default, so the resolved tree
written next to the outputs is complete and loads back to an equal config.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .data import DomainDataset, GaussianToyConfig, GenerativeConfig, make_gaussian_toy, make_generative
from .errors import ConfigError
from .harness import TrainConfig
from .model import ModelSpec
from .optim import AnnealConfig, GgaLConfig


@dataclass
class DatasetSection:
    kind: str = "toy"
    seed: int = 0
    toy: GaussianToyConfig = field(default_factory=GaussianToyConfig)
    generative: GenerativeConfig = field(default_factory=GenerativeConfig)

    def validate(self) -> "DatasetSection":
        if self.kind not in ("toy", "generative"):
            raise ConfigError(f"dataset.kind must be 'toy' or 'generative', got {self.kind!r}")
        self.toy.validate()
        self.generative.validate()
        return self

    def build(self) -> DomainDataset:
        if self.kind == "toy":
            return make_gaussian_toy(self.toy, seed=self.seed)
        return make_generative(self.generative, seed=self.seed)

    @property
    def input_dim(self) -> int:
        if self.kind == "toy":
            return len(self.toy.target_means[0])
        return self.generative.x_dim


@dataclass
class ProtocolSection:
    seeds: int = 3
    # "fixed" trains on the dataset's source domains once; "leave-one-out" rotates the target
    splits: str = "fixed"
    jobs: int = 1

    def validate(self) -> "ProtocolSection":
        if self.seeds < 1:
            raise ConfigError("protocol.seeds must be >= 1")
        if self.splits not in ("fixed", "leave-one-out"):
            raise ConfigError(f"protocol.splits must be 'fixed' or 'leave-one-out', got {self.splits!r}")
        if self.jobs < 1:
            raise ConfigError("protocol.jobs must be >= 1")
        return self


@dataclass
class OutputSection:
    dir: str = "out"


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> "ExperimentConfig":
        self.train.validate()
        self.dataset.validate()
        self.protocol.validate()
        if self.dataset.input_dim != self.train.model.input_dim:
            raise ConfigError(
                f"model.input_dim={self.train.model.input_dim} but the dataset has "
                f"{self.dataset.input_dim} features")
        return self


# --------------------------------------------------------------------------
# dict <-> dataclass

# the TrainConfig's nested parts live in their own top-level sections
_TRAIN_SUBSECTIONS = ("model", "anneal", "ggal")


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where} must be a table")
        return _build(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be an array")
        (inner, *_) = typing.get_args(tp)
        items = [_coerce(inner, v, f"{where}[{i}]") for i, v in enumerate(value)]
        return tuple(items) if origin is tuple else items
    raise ConfigError(f"unsupported field type at {where}")


def _build(cls, data: dict, where: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}" if where else k) for k, v in data.items()}
    return cls(**kwargs)


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def from_dict(data: dict) -> ExperimentConfig:
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    allowed = {"train", "dataset", "protocol", "output", *_TRAIN_SUBSECTIONS}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    train = dict(data.get("train", {}))
    for sub in _TRAIN_SUBSECTIONS:
        if sub in train:
            raise ConfigError(f"[{sub}] is a top-level section, not part of [train]")
        if sub in data:
            train[sub] = data[sub]
    cfg = ExperimentConfig(
        train=_build(TrainConfig, train, "train"),
        dataset=_build(DatasetSection, data.get("dataset", {}), "dataset"),
        protocol=_build(ProtocolSection, data.get("protocol", {}), "protocol"),
        output=_build(OutputSection, data.get("output", {}), "output"),
    )
    return cfg.validate()


def to_dict(cfg: ExperimentConfig) -> dict:
    train = _plain(cfg.train)
    out = {"train": {k: v for k, v in train.items() if k not in _TRAIN_SUBSECTIONS}}
    for sub in _TRAIN_SUBSECTIONS:
        out[sub] = train[sub]
    out["dataset"] = _plain(cfg.dataset)
    out["protocol"] = _plain(cfg.protocol)
    out["output"] = _plain(cfg.output)
    return out


def dumps(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def loads(text: str, overrides=()) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from exc
    for item in overrides:
        apply_override(data, item)
    return from_dict(data)


def load(path, overrides=()) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return loads(text, overrides)


# --------------------------------------------------------------------------
# --set overrides


def _leaf_paths(tree: dict, prefix=()) -> list[tuple[str, ...]]:
    out = []
    for k, v in tree.items():
        if isinstance(v, dict):
            out.extend(_leaf_paths(v, prefix + (k,)))
        else:
            out.append(prefix + (k,))
    return out


def _parse_value(raw: str):
    try:
        return tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        return raw


def apply_override(data: dict, item: str) -> None:
    """Apply ``key=value`` to a raw config tree in place.

    ``key`` is a dotted path (``anneal.rho``) or a bare leaf name that is
    unique across the resolved tree (``method``). Values are parsed as TOML
    literals, falling back to a plain string.
    """
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    path = tuple(key.split("."))
    if len(path) == 1:
        matches = [p for p in _leaf_paths(to_dict(ExperimentConfig())) if p[-1] == key]
        if len(matches) != 1:
            options = ", ".join(".".join(m) for m in matches) or "none"
            raise ConfigError(f"override key {key!r} is ambiguous or unknown (matches: {options})")
        path = matches[0]
    node = data
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {key!r} crosses a non-table value")
    node[path[-1]] = _parse_value(raw.strip())


def model_spec(cfg: ExperimentConfig) -> ModelSpec:
    return cfg.train.model


__all__ = [
    "AnnealConfig", "DatasetSection", "ExperimentConfig", "GgaLConfig", "OutputSection",
    "ProtocolSection", "apply_override", "dumps", "from_dict", "load", "loads", "to_dict",
]
