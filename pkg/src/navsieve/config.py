"""key=value override files for the command-line tools.

One override per line, ``#`` starts a comment. Keys name dataclass fields;
dotted keys reach nested dataclasses (``episode.timeout = 90``). Values are
coerced to the type of the field's current value, and tuples are written
comma-separated (``barrel_counts = 3,5,7``).
"""

from __future__ import annotations

import dataclasses
import enum
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def _coerce(value: str, current, key: str):
    try:
        if isinstance(current, bool):
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if isinstance(current, enum.Enum):
            return type(current)(value)
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            items = [v.strip() for v in value.split(",") if v.strip()]
            if current:
                return tuple(_coerce(v, current[0], key) for v in items)
            return tuple(items)
        if current is None:
            return int(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def apply_overrides(obj, overrides: dict[str, str]):
    """A copy of dataclass ``obj`` with every override applied."""
    nested: dict[str, dict[str, str]] = {}
    direct: dict[str, object] = {}
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in overrides.items():
        head, _, rest = key.partition(".")
        if head not in names:
            raise ConfigError(f"unknown setting {key!r} for {type(obj).__name__}")
        if rest:
            nested.setdefault(head, {})[rest] = value
        else:
            direct[head] = _coerce(value, getattr(obj, head), key)
    for head, sub in nested.items():
        inner = getattr(obj, head)
        if not dataclasses.is_dataclass(inner):
            raise ConfigError(f"{head!r} has no nested settings")
        direct[head] = apply_overrides(inner, sub)
    try:
        return dataclasses.replace(obj, **direct)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
