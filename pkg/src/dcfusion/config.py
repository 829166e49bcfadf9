"""Flat key=value config files mapped onto dataclasses.

One `key = value` pair per line; blank lines and # comments are
skipped. Keys are the dataclass field names. Booleans accept
true/false/1/0/yes/no, tuples are comma separated.
"""

import dataclasses
import typing
from pathlib import Path

from .errors import ConfigError

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    "Parse key=value lines to a string map; errors carry line numbers."
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{lineno}: expected key = value, "
                              f"got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{origin}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _convert(raw: str, target_type, key: str):
    if target_type is bool:
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if target_type is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}"
                              ) from None
    if target_type is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}"
                              ) from None
    if target_type is str:
        return raw
    if target_type is tuple or typing.get_origin(target_type) is tuple:
        if not raw:
            return ()
        try:
            return tuple(float(part) for part in raw.split(","))
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated numbers, "
                              f"got {raw!r}") from None
    raise ConfigError(f"{key}: unsupported config field type {target_type}")


def coerce_dataclass(cls, mapping: dict):
    "Build a dataclass instance from string values, type-checked."
    _resolve_field_types(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in mapping.items():
        if key not in fields:
            known = ", ".join(sorted(fields))
            raise ConfigError(f"unknown config key {key!r} (known: {known})")
        kwargs[key] = _convert(raw, fields[key].type, key)
    return cls(**kwargs)


def _resolve_field_types(cls) -> None:
    # dataclasses store annotations as strings under
    # `from __future__ import annotations`; normalize to types
    hints = typing.get_type_hints(cls)
    for f in dataclasses.fields(cls):
        if isinstance(f.type, str):
            f.type = hints[f.name]


def load_config(path, cls):
    "Read a config file into a dataclass instance."
    text = Path(path).read_text()
    return coerce_dataclass(cls, parse_config_text(text, str(path)))


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(instance) -> str:
    "Render a dataclass as key = value lines, one field per line."
    lines = [f"{f.name} = {format_value(getattr(instance, f.name))}"
             for f in dataclasses.fields(instance)]
    return "\n".join(lines) + "\n"
