"""Strict config parsing shared by the library and the CLI.

Configs are plain JSON objects. Unknown keys are rejected rather than ignored so
that a typo ("alpa" for "alpha") fails loudly instead of silently running with a
default.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Any, Mapping, Type, TypeVar

T = TypeVar("T")


class ConfigError(ValueError):
    """Raised when a config file or config object fails validation."""


def load_json_config(path: str | Path) -> dict:
    """Load a JSON config file, requiring a top-level object."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return data


def reject_unknown_keys(data: Mapping[str, Any], allowed: set[str], where: str) -> None:
    """Raise ConfigError naming the first unknown key in `data`."""
    for key in data:
        if key not in allowed:
            raise ConfigError(
                f"unknown key '{key}' in {where} "
                f"(allowed: {', '.join(sorted(allowed))})"
            )


def dataclass_from_dict(cls: Type[T], data: Mapping[str, Any], where: str) -> T:
    """Build a dataclass from a mapping, rejecting unknown keys.

    Nested dataclass fields are built recursively from nested mappings. Tuple
    fields accept JSON lists.
    """
    if not dataclasses.is_dataclass(cls):
        raise TypeError(f"{cls!r} is not a dataclass")
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where} must be an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    reject_unknown_keys(data, set(fields), where)
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        field = fields[name]
        ftype = field.type
        # Resolve nested dataclasses declared as forward references or types.
        nested = _nested_dataclass(cls, field)
        if nested is not None and isinstance(value, Mapping):
            kwargs[name] = dataclass_from_dict(nested, value, f"{where}.{name}")
        elif isinstance(value, list) and _wants_tuple(ftype):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def _nested_dataclass(cls: type, field: dataclasses.Field):
    import typing

    hints = typing.get_type_hints(cls)
    hint = hints.get(field.name, field.type)
    if dataclasses.is_dataclass(hint):
        return hint
    for arg in typing.get_args(hint):
        if dataclasses.is_dataclass(arg):
            return arg
    return None


def _wants_tuple(ftype: Any) -> bool:
    text = str(ftype)
    return "tuple" in text or "Tuple" in text
