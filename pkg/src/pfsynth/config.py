"""Pipeline configuration: a line-oriented ``section.key = value`` file.

Blank lines and ``#`` comments are ignored. Unknown keys and out-of-range
values are rejected with the dotted path of the offending field.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Field:
    kind: type
    default: Any
    check: Callable[[Any], bool] = lambda v: True
    rule: str = ""


def _pos(v):
    return v > 0


def _unit_open(v):
    return 0 < v < 1


SCHEMA: dict[str, Field] = {
    "seed": Field(int, 0, lambda v: v >= 0, "must be >= 0"),
    "data.edf_dir": Field(str, ""),
    "data.real_manifest": Field(str, ""),
    "data.synthetic_manifest": Field(str, ""),
    "preprocess.line_freq": Field(float, 60.0, _pos, "must be > 0"),
    "preprocess.size": Field(int, 256, lambda v: v >= 8 and v % 8 == 0, "must be a positive multiple of 8"),
    "preprocess.window_s": Field(float, 60.0, _pos, "must be > 0"),
    "gan.batch_size": Field(int, 32, _pos, "must be >= 1"),
    "gan.patience": Field(int, 15, _pos, "must be >= 1"),
    "gan.beta1": Field(float, 0.5, lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    "gan.learning_rate": Field(float, 1e-3, _pos, "must be > 0"),
    "gan.max_epochs": Field(int, 3000, _pos, "must be >= 1"),
    "gan.min_epochs": Field(int, 100, lambda v: v >= 0, "must be >= 0"),
    "gan.samples": Field(int, 100, _pos, "must be >= 1"),
    "sieve.nu": Field(float, 0.1, lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    "sieve.gamma": Field(str, "scale", lambda v: v == "scale" or _float_pos(v), "must be 'scale' or a positive number"),
    "sieve.grid": Field(int, 32, _pos, "must be >= 1"),
    "cesp.folds": Field(int, 10, lambda v: v >= 2, "must be >= 2"),
    "cesp.learning_rate": Field(float, 1e-4, _pos, "must be > 0"),
    "cesp.epochs": Field(int, 50, _pos, "must be >= 1"),
    "cesp.batch_size": Field(int, 32, _pos, "must be >= 1"),
    "cesp.patience": Field(int, 5, _pos, "must be >= 1"),
    "cesp.augmentation": Field(int, 0, lambda v: v >= 0, "must be >= 0"),
    "eval.threshold": Field(float, 0.5, _unit_open, "must lie in (0, 1)"),
    "eval.sph_min": Field(float, 10.0, _pos, "must be > 0"),
    "eval.sop_min": Field(float, 30.0, _pos, "must be > 0"),
}

PATH_KEYS = ("data.edf_dir", "data.real_manifest", "data.synthetic_manifest")

# desk-scale overrides applied by --toy before the user's file
TOY_OVERRIDES = {
    "preprocess.line_freq": 50.0,
    "preprocess.size": 32,
    "gan.max_epochs": 400,
    "gan.min_epochs": 300,
    "gan.samples": 40,
}


def _float_pos(v) -> bool:
    try:
        return float(v) > 0
    except ValueError:
        return False


def _coerce(key: str, raw) -> Any:
    f = SCHEMA[key]
    if isinstance(raw, f.kind) and not isinstance(raw, bool):
        return raw
    try:
        if f.kind is int:
            val = float(raw)
            if not val.is_integer():
                raise ValueError
            return int(val)
        return f.kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {f.kind.__name__}, got {raw!r}") from None


class PipelineConfig:
    def __init__(self, values: dict[str, Any] | None = None, base_dir: Path = Path(".")):
        self.base_dir = Path(base_dir)
        self.values = {k: f.default for k, f in SCHEMA.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, raw) -> None:
        if key not in SCHEMA:
            raise ConfigError(key, "unknown configuration key")
        self.values[key] = _coerce(key, raw)

    def __getitem__(self, key: str):
        return self.values[key]

    def path(self, key: str) -> Path | None:
        v = self.values[key]
        if not v:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    def validate(self) -> "PipelineConfig":
        for key, f in SCHEMA.items():
            v = self.values[key]
            if not f.check(v):
                raise ConfigError(key, f"{f.rule} (got {v!r})")
        for key in PATH_KEYS:
            p = self.path(key)
            if p is not None and not p.exists():
                raise ConfigError(key, f"path does not exist: {p}")
        return self

    def section(self, name: str) -> dict[str, Any]:
        pre = name + "."
        return {k[len(pre) :]: v for k, v in self.values.items() if k.startswith(pre)}

    def digest(self) -> str:
        blob = json.dumps(self.values, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.values.items())


def parse_config(text: str, base_dir: Path = Path("."), overrides: dict | None = None) -> PipelineConfig:
    cfg = PipelineConfig(overrides, base_dir)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        cfg.set(key.strip(), val.strip())
    return cfg


def load_config(path=None, toy: bool = False) -> PipelineConfig:
    overrides = dict(TOY_OVERRIDES) if toy else {}
    if path is None:
        return PipelineConfig(overrides)
    path = Path(path)
    if not path.exists():
        raise ConfigError("--config", f"file not found: {path}")
    return parse_config(path.read_text(), path.parent, overrides)
