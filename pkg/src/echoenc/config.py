"""Run configuration: a nested YAML/JSON document with model, train and eval sections.

Precedence is command-line flag > config file > built-in default. Unknown
keys are rejected with their dotted path.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .encoder import VARIANTS, EchoConfig
from .errors import ConfigError, DataIOError
from .harness.pipeline import EvalConfig
from .trainer import TrainConfig

TRAIN_PRESETS = ("full", "toy")

_MODEL_KEYS = {f.name for f in fields(EchoConfig)}
# the training seed is the run-level ``seed``; it is not set per section
_TRAIN_KEYS = ({f.name for f in fields(TrainConfig)} - {"seed"}) | {"preset"}
_EVAL_KEYS = {f.name for f in fields(EvalConfig)}
_TOP = {"model": _MODEL_KEYS, "train": _TRAIN_KEYS, "eval": _EVAL_KEYS}
_SCALARS = {"seed", "threads"}



class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-4`` style scalars as floats (YAML 1.2 behaviour)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:\d+\.?\d*|\.\d+)[eE][-+]?\d+$"),
    list("-+0123456789."),
)

DEFAULTS = {
    "model": {"variant": "small"},
    "train": {"preset": "full"},
    "eval": {},
    "seed": 0,
    "threads": 1,
}


def _check_keys(doc: dict, where: str = ""):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(doc).__name__}")
    for key, value in doc.items():
        path = f"{where}.{key}" if where else key
        if not where:
            if key in _SCALARS:
                continue
            if key not in _TOP:
                raise ConfigError(f"{path}: unknown key")
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
            _check_keys(value, key)
        elif key not in _TOP[where]:
            raise ConfigError(f"{path}: unknown key")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_document(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.load(text, Loader=_Loader) if path.suffix.lower() in (".yaml", ".yml") else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config {path} is not valid: {exc}") from exc
    return {} if doc is None else doc


def parse_override(item: str) -> dict:
    """``a.b=v`` to ``{"a": {"b": v}}``; the value is parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"override {item!r} has an empty key segment")
    try:
        value = yaml.load(raw, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {item!r}: cannot parse value ({exc})") from exc
    out = value
    for p in reversed(parts):
        out = {p: out}
    return out


@dataclass(frozen=True)
class RunConfig:
    model: EchoConfig
    train: TrainConfig
    eval: EvalConfig
    seed: int
    threads: int
    document: dict
    explicit: dict  # keys set by a file, --set or a flag, defaults excluded

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "eval": self.eval.to_dict(),
            "seed": self.seed,
            "threads": self.threads,
        }


def _build_model(section: dict) -> EchoConfig:
    section = dict(section)
    variant = section.pop("variant", "small")
    if variant in VARIANTS or variant == "custom":
        return EchoConfig.from_variant(variant, **section)
    raise ConfigError(f"model.variant: unknown variant {variant!r}; choose from {sorted(VARIANTS)}")


def _build_train(section: dict, seed: int) -> TrainConfig:
    section = dict(section)
    preset = section.pop("preset", "full")
    if preset not in TRAIN_PRESETS:
        raise ConfigError(f"train.preset: must be one of {TRAIN_PRESETS}, got {preset!r}")
    section["seed"] = seed
    return TrainConfig.toy(**section) if preset == "toy" else TrainConfig(**section)


def resolve(doc: dict | None = None, overrides=(), flags: dict | None = None) -> RunConfig:
    """Merge defaults, file document, ``--set`` overrides and dedicated flags."""
    explicit = {}
    layers = [doc or {}] + [parse_override(o) for o in overrides] + [flags or {}]
    for layer in layers:
        _check_keys(layer)
        explicit = _merge(explicit, layer)
    merged = _merge(DEFAULTS, explicit)
    seed = merged["seed"]
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: must be a non-negative integer, got {seed!r}")
    threads = merged["threads"]
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError(f"threads: must be a positive integer, got {threads!r}")
    try:
        model = _build_model(merged["model"])
        train = _build_train(merged["train"], seed)
        ev = EvalConfig(**dict({"seed": seed}, **merged["eval"]))
    except TypeError as exc:
        raise ConfigError(f"invalid configuration value: {exc}") from exc
    return RunConfig(model, train, ev, seed, threads, merged, explicit)


def load_config(path=None, overrides=(), flags=None) -> RunConfig:
    doc = load_document(path) if path else {}
    return resolve(doc, overrides, flags)
