"""Flat ``key = value`` config files mapping onto :class:`EngineConfig` fields."""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path
from typing import Dict, Union

from lsmrum.core import Rect
from lsmrum.engine import EngineConfig


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _world(v: str) -> Rect:
    parts = [p for p in v.replace(" ", ",").split(",") if p]
    if len(parts) != 4:
        raise ValueError("world needs four numbers: x1,y1,x2,y2")
    return Rect.of(*(float(p) for p in parts))


def _optional_int(v: str):
    return None if v.lower() in ("", "none") else int(v)


_PARSERS = {
    "memory_budget_bytes": int,
    "page_size_bytes": int,
    "merge_threshold": int,
    "node_capacity": int,
    "buffered_threshold": int,
    "vacuum_threshold": int,
    "cleaning_flags": str,
    "curve": str,
    "world": _world,
    "max_mergeable_bytes": _optional_int,
    "vacuum_skip_recent": _bool,
    "min_fill": float,
}
assert set(_PARSERS) == {f.name for f in fields(EngineConfig)}


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, object]:
    values: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip().strip('"').strip("'")
        parser = _PARSERS.get(key)
        if parser is None:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
    return values


def load_config(path: Union[str, Path, None]) -> EngineConfig:
    """Read a config file; ``None`` yields the defaults. OSError propagates."""
    if path is None:
        return EngineConfig()
    text = Path(path).read_text()
    values = parse_config_text(text, str(path))
    try:
        return EngineConfig(**values)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
