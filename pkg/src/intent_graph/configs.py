"""Strict dataclass <- mapping construction shared by all config types.

Unknown keys are hard errors everywhere: a typo in a config file must fail
loudly instead of silently running with a default.
"""

from __future__ import annotations

import dataclasses
import typing
from typing import Any, Mapping, Type, TypeVar

T = TypeVar("T")


class ConfigError(Exception):
    """Invalid, unknown, or inconsistent configuration."""


def from_mapping(cls: Type[T], mapping: Mapping[str, Any], where: str = "") -> T:
    """Build dataclass ``cls`` from ``mapping``, rejecting unknown keys.

    Nested dataclass fields accept nested mappings. ``where`` prefixes key
    paths in error messages (e.g. "model.").
    """
    if not isinstance(mapping, Mapping):
        raise ConfigError(f"{where or 'config'} must be a mapping, got {type(mapping).__name__}")
    field_names = {f.name for f in dataclasses.fields(cls)}  # type: ignore[arg-type]
    unknown = set(mapping) - field_names
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(where + k for k in unknown)}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for key, value in mapping.items():
        target = hints.get(key)
        if isinstance(target, type) and dataclasses.is_dataclass(target) and isinstance(value, Mapping):
            value = from_mapping(target, value, where=f"{where}{key}.")
        kwargs[key] = value
    try:
        return cls(**kwargs)  # type: ignore[call-arg]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where.rstrip('.') or 'config'} section: {exc}") from exc


def to_plain_dict(obj: Any) -> dict:
    """Recursive dataclass -> JSON-friendly dict (tuples become lists)."""
    out = dataclasses.asdict(obj)

    def _clean(v):
        if isinstance(v, dict):
            return {k: _clean(x) for k, x in v.items()}
        if isinstance(v, tuple):
            return [_clean(x) for x in v]
        if isinstance(v, list):
            return [_clean(x) for x in v]
        return v

    return _clean(out)
