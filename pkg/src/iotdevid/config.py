"""Run configuration: TOML file, CLI overrides, validation.

Precedence is flags > file > defaults. Relative paths in a file are
resolved against the file's directory.
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields, replace
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import aggregate as agg
from .dataset import CASES
from .tree import HyperParams


class ConfigError(ValueError):
    pass


PATH_KEYS = ("captures_root", "label_map", "manifest", "adjustments", "out")


@dataclass(frozen=True)
class RunConfig:
    captures_root: Optional[str] = None
    label_map: Optional[str] = None
    manifest: Optional[str] = None
    adjustments: Optional[str] = None
    out: str = "out"
    fraction: float = 1.0
    hyperparams: HyperParams = field(default_factory=HyperParams)
    repeats: int = 1
    base_seed: int = 0
    group_size: object = agg.WHOLE
    conditions: tuple = ("AA", "AI", "IA", "II")
    sweep: bool = False
    # directory that relative paths were resolved against
    base_dir: str = "."

    def validate(self, need_files: tuple = ("label_map", "manifest")) -> "RunConfig":
        if not isinstance(self.fraction, (int, float)) or not 0 < self.fraction <= 1:
            raise ConfigError(f"fraction must be in (0, 1], got {self.fraction!r}")
        if not isinstance(self.repeats, int) or self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats!r}")
        try:
            agg.parse_group_size(self.group_size)
        except ValueError as e:
            raise ConfigError(f"bad group_size {self.group_size!r}") from e
        bad = [c for c in self.conditions if c not in CASES]
        if bad or not self.conditions:
            raise ConfigError(f"conditions must be drawn from {sorted(CASES)}, got {list(self.conditions)}")
        for key in need_files:
            p = getattr(self, key)
            if p is None:
                raise ConfigError(f"{key} is not set")
            if not os.path.isfile(p):
                raise ConfigError(f"{key} file not found: {p}")
        if self.adjustments is not None and not os.path.isfile(self.adjustments):
            raise ConfigError(f"adjustments file not found: {self.adjustments}")
        if self.captures_root is not None and not os.path.isdir(self.captures_root):
            raise ConfigError(f"captures_root is not a directory: {self.captures_root}")
        return self

    def relpath(self, p: str) -> str:
        """Path relative to ``base_dir``, with forward slashes."""
        return os.path.relpath(p, self.base_dir).replace(os.sep, "/")

    def as_dict(self) -> dict:
        d = {}
        for f in fields(self):
            if f.name == "base_dir":
                continue
            v = getattr(self, f.name)
            if f.name in PATH_KEYS and f.name != "out":
                v = None if v is None else self.relpath(v)
            elif f.name == "out":
                continue
            elif isinstance(v, HyperParams):
                v = v.as_dict()
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d


_SIMPLE = {"fraction": float, "repeats": int, "base_seed": int, "sweep": bool}
_HP_KEYS = ("max_depth", "min_samples_split", "min_samples_leaf")


def _coerce(raw: dict, base_dir: str) -> dict:
    known = set(PATH_KEYS) | set(_SIMPLE) | {"group_size", "conditions", "hyperparams"} | set(_HP_KEYS)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for k in PATH_KEYS:
        if k in raw:
            if not isinstance(raw[k], str):
                raise ConfigError(f"{k} must be a string path")
            out[k] = raw[k] if os.path.isabs(raw[k]) else os.path.normpath(os.path.join(base_dir, raw[k]))
    for k, typ in _SIMPLE.items():
        if k in raw:
            v = raw[k]
            if typ is float and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if not isinstance(v, typ) or (typ is int and isinstance(v, bool)):
                raise ConfigError(f"{k} must be {typ.__name__}, got {v!r}")
            out[k] = v
    if "group_size" in raw:
        out["group_size"] = raw["group_size"]
    if "conditions" in raw:
        c = raw["conditions"]
        out["conditions"] = tuple([c] if isinstance(c, str) else c)
    hp = dict(raw.get("hyperparams", {}))
    hp.update({k: raw[k] for k in _HP_KEYS if k in raw})
    if hp:
        try:
            out["hyperparams"] = HyperParams(**hp)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad hyperparams: {e}") from e
    return out


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the TOML file at ``path``, then non-None ``overrides``."""
    cfg = RunConfig(base_dir=os.getcwd())
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
        base = os.path.dirname(os.path.abspath(path))
        cfg = replace(cfg, base_dir=base, **_coerce(raw, base))
    if overrides:
        given = {k: v for k, v in overrides.items() if v is not None}
        cfg = replace(cfg, **_coerce(given, os.getcwd()))
    return cfg
