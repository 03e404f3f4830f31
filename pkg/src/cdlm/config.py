"""Plain-text key=value configuration with command-line overrides."""

from __future__ import annotations

import json
import sys


class ConfigError(ValueError):
    pass


def load_config_file(path) -> dict[str, str]:
    """Parse `key = value` lines; blank lines and # comments are ignored."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def resolve(defaults: dict, file_values: dict[str, str], cli_values: dict) -> dict:
    """Defaults < config file < command-line flags (None means unset)."""
    resolved = dict(defaults)
    for key, raw in file_values.items():
        if key not in defaults:
            raise ConfigError(f"unknown configuration key {key!r}")
        resolved[key] = _coerce(raw, defaults[key])
    for key, value in cli_values.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _coerce(raw: str, template):
    if isinstance(template, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    return raw


def log_resolved(resolved: dict, stream=None) -> None:
    stream = stream or sys.stderr
    print("config: " + json.dumps(resolved, sort_keys=True), file=stream)
