"""``key = value`` configuration files and typed overrides for ExperimentConfig."""
from __future__ import annotations

import dataclasses
from typing import Iterable

from .experiment import ConfigError, ExperimentConfig

_OPTIONAL_FLOAT = {"eta_prime", "eta"}
_OPTIONAL_INT = {"subset"}
_STR = {"data", "algorithm", "labels", "out"}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def coerce(key: str, text: str):
    """Convert the string ``text`` to the type of ExperimentConfig field ``key``."""
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    if key not in names:
        raise ConfigError(f"unknown configuration key {key!r}")
    text = text.strip()
    try:
        if key in _STR:
            return text or None if key == "out" else text
        if key == "tau":
            try:
                return float(text)
            except ValueError:
                return text
        if key == "hidden":
            return tuple(int(h) for h in text.replace(" ", "").split(",") if h)
        if key in _OPTIONAL_FLOAT:
            return None if text.lower() in ("", "none") else float(text)
        if key in _OPTIONAL_INT:
            return None if text.lower() in ("", "none") else int(text)
        default = getattr(ExperimentConfig(), key)
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return int(text)
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_assignments(lines: Iterable[str], source: str = "<config>") -> dict:
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = coerce(key, value)
    return out


def load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return parse_assignments(f, str(path))


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the file, then explicit overrides (``None`` overrides are ignored)."""
    values = dict(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig(**values)
