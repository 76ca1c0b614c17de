"""Flat configuration for the command line.

Grammar, one setting per line::

    # comment
    train.alpha = 0.1
    data.snr_v  = 1.0     # trailing comments are allowed
    seed = 3

Keys are namespaced (``train.``, ``data.``, ``schema.``, ``gradcheck.``,
``ablate.``) plus the top-level ``seed``. Values are typed from the defaults;
``none`` clears an optional integer. Precedence is flags, then file, then
defaults. A JSON file holding a ``config`` object (as embedded in every JSON
artifact) is accepted in place of a text file.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .harness.data import SyntheticSpec
from .harness.train import TrainConfig


class ConfigError(ValueError):
    pass


def _spec_of(cls, prefix: str, skip=("seed",)) -> dict[str, tuple[type, Any]]:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        default = f.default
        kind = {"int | None": int, "bool": bool, "int": int, "float": float}.get(str(f.type))
        if kind is None:
            raise TypeError(f"unsupported field type {f.type} for {f.name}")
        out[f"{prefix}.{f.name}"] = (kind, default)
    return out


SCHEMA: dict[str, tuple[type, Any]] = {
    "seed": (int, 0),
    **_spec_of(TrainConfig, "train"),
    **_spec_of(SyntheticSpec, "data"),
    "schema.threshold": (float, 0.95),
    "gradcheck.tol": (float, 1e-4),
    "ablate.seeds": (int, 5),
    "ablate.workers": (int, 1),
}
OPTIONAL = {"train.steps", "train.hidden"}

# the command line trains for a fixed step budget unless told otherwise
DEFAULTS: dict[str, Any] = {k: v for k, (_, v) in SCHEMA.items()}
DEFAULTS["train.steps"] = 500


def coerce(key: str, value: Any) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown key {key!r}")
    kind, _ = SCHEMA[key]
    if value is None or (isinstance(value, str) and value.strip().lower() == "none"):
        if key in OPTIONAL:
            return None
        raise ConfigError(f"{key} cannot be none")
    if kind is bool:
        if isinstance(value, bool):
            return value
        s = str(value).strip().lower()
        if s in ("true", "yes", "on", "1"):
            return True
        if s in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if kind is int and isinstance(value, float) and not value.is_integer():
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    try:
        return kind(value.strip() if isinstance(value, str) else value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}") from None


def parse_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = coerce(key, value)
        except ConfigError as e:
            raise ConfigError(f"{source}:{n}: {e}") from None
    return out


def load_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None
        obj = obj.get("config", obj) if isinstance(obj, dict) else None
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return {k: coerce(k, v) for k, v in obj.items()}
    return parse_text(text, str(path))


def _fmt(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value)


@dataclass(frozen=True)
class CliConfig:
    values: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def resolve(cls, file: str | Path | None = None, overrides: dict[str, Any] | None = None) -> CliConfig:
        values = dict(DEFAULTS)
        if file is not None:
            values.update(load_file(file))
        for k, v in (overrides or {}).items():
            values[k] = coerce(k, v)
        return cls(values)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def train_config(self, **changes) -> TrainConfig:
        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("train.")}
        return TrainConfig(seed=self["seed"], **{**kw, **changes})

    def synthetic_spec(self, **changes) -> SyntheticSpec:
        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("data.")}
        return SyntheticSpec(seed=self["seed"], **{**kw, **changes})

    def to_dict(self) -> dict[str, Any]:
        return dict(sorted(self.values.items()))

    def to_text(self) -> str:
        width = max(len(k) for k in self.values)
        return "".join(f"{k.ljust(width)} = {_fmt(v)}\n" for k, v in sorted(self.values.items()))
