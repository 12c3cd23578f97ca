"""
Declarative configuration files.

Configs are TOML documents whose sections map onto config dataclasses.
``section_from_dict`` builds one dataclass from a section, collecting every
unknown key and type problem instead of stopping at the first, so a user
sees all schema violations in a single ``ConfigurationError``.
"""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import Any, TypeVar

import toml

from src.errors import ConfigurationError

logger = logging.getLogger(__name__)

T = TypeVar("T")

_SCALARS = {"int": int, "float": float, "bool": bool, "str": str}


def load_toml(path: str | Path) -> dict[str, Any]:
    """Read a TOML file into nested dictionaries."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = toml.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except toml.TomlDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid TOML ({exc})") from exc
    logger.debug("Loaded config file %s with sections %s", path, sorted(data))
    return data


def dump_toml(data: dict[str, Any]) -> str:
    return toml.dumps(data)


def _coerce(value: Any, type_name: str, where: str, problems: list[str]) -> Any:
    """Check *value* against a scalar annotation, widening int to float."""
    base = type_name.replace(" ", "").split("|")
    optional = "None" in base
    base = [b for b in base if b != "None"]
    if value is None:
        if not optional:
            problems.append(f"{where}: must not be null")
        return value
    if len(base) != 1 or base[0] not in _SCALARS:
        return value
    expected = _SCALARS[base[0]]
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected is int and isinstance(value, bool):
        problems.append(f"{where}: expected int, got bool")
        return value
    if not isinstance(value, expected):
        problems.append(f"{where}: expected {base[0]}, got {type(value).__name__}")
    return value


def section_from_dict(cls: type[T], data: dict[str, Any] | None, section: str, base: T | None = None) -> tuple[T, list[str]]:
    """
    Overlay *data* onto *base* (or the class defaults) for dataclass *cls*.

    Returns:
        The resulting instance and the list of problems found. Problems from
        the instance's own ``validate()`` are included.
    """
    problems: list[str] = []
    fields = {f.name: f for f in dataclasses.fields(cls)}
    values = dataclasses.asdict(base) if base is not None else {}
    for key, value in (data or {}).items():
        if key not in fields:
            problems.append(f"[{section}] unknown key {key!r}")
            continue
        annotation = fields[key].type
        type_name = annotation if isinstance(annotation, str) else getattr(annotation, "__name__", str(annotation))
        values[key] = _coerce(value, type_name, f"[{section}] {key}", problems)
    try:
        instance = cls(**values)
    except (TypeError, ValueError) as exc:
        problems.append(f"[{section}] {exc}")
        return (base if base is not None else cls()), problems
    validate = getattr(instance, "validate", None)
    if validate is not None and not problems:
        problems.extend(f"[{section}] {p}" for p in validate())
    return instance, problems
