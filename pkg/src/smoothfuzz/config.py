"""Flat ``key=value`` configuration files for campaigns."""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .orchestrator import CampaignConfig


class ConfigError(ValueError):
    pass


_FIELDS = {f.name: f for f in dataclasses.fields(CampaignConfig)}
_TYPES = {name: type(f.default) for name, f in _FIELDS.items()}


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment line."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def load_config(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def parse_override(item: str) -> tuple[str, str]:
    key, sep, value = item.partition("=")
    if not sep or key.strip() not in _FIELDS:
        raise ConfigError(f"bad override {item!r}; expected KEY=VALUE with a known key")
    return key.strip(), value.strip()


def _coerce(key: str, value):
    kind = _TYPES[key]
    if not isinstance(value, str):
        return kind(value)
    try:
        if kind is int:
            return int(value.replace("_", ""), 0)
        if kind is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}") from None
    return value


def build_config(*layers: dict) -> CampaignConfig:
    """Merge layers left to right (later wins) onto the defaults."""
    merged = {}
    for layer in layers:
        for key, value in layer.items():
            if value is None:
                continue
            if key not in _FIELDS:
                raise ConfigError(f"unknown key {key!r}")
            merged[key] = _coerce(key, value)
    try:
        return CampaignConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(config: CampaignConfig) -> str:
    """Snapshot that :func:`parse_config` reads back to an equal config."""
    lines = []
    for name in _FIELDS:
        value = getattr(config, name)
        lines.append(f"{name}={value!r}" if isinstance(value, float) else f"{name}={value}")
    return "\n".join(lines) + "\n"
