"""Plain ``key = value`` config files layered over dataclass defaults."""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, get_type_hints


class ConfigError(ValueError):
    pass


def read_kv(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        values[key] = value
    return values


def _coerce(value: Any, typ: type, key: str) -> Any:
    if not isinstance(value, str):
        return value
    try:
        if typ is bool:
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return typ(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}") from None


def build(cls, *layers: dict[str, Any]):
    """Instantiate dataclass ``cls`` from defaults overridden by each layer in turn.

    Later layers win. ``None`` values in a layer are ignored, so unset
    command-line flags fall through to the file or the default.
    """
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    merged: dict[str, Any] = {}
    for layer in layers:
        unknown = sorted(set(layer) - names)
        if unknown:
            raise ConfigError(f"unknown {cls.__name__} key(s): {', '.join(unknown)}")
        for k, v in layer.items():
            if v is not None:
                merged[k] = _coerce(v, hints[k], k)
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def split_file(path: str | Path | None, *classes) -> list[dict[str, str]]:
    """Read one config file and distribute its keys among several dataclasses.

    ``classes`` are ``(section, cls)`` pairs. Keys may be qualified
    (``probe.lr = 0.1``) or bare (``lr = 0.01``), in which case they go to the
    first section that has the field. A bare ``seed`` goes to every section
    that has one.
    """
    raw = read_kv(path) if path else {}
    out: list[dict[str, str]] = [{} for _ in classes]
    owners = [{f.name for f in dataclasses.fields(cls)} for _, cls in classes]
    # qualified keys are applied after bare ones so they take precedence
    for key, value in sorted(raw.items(), key=lambda kv: "." in kv[0]):
        section, _, bare = key.rpartition(".")
        targets = [
            i for i, (name, _) in enumerate(classes)
            if bare in owners[i] and (section == name or not section)
        ]
        if not section and bare != "seed":
            targets = targets[:1]
        if not targets:
            raise ConfigError(f"{path}: unknown config key {key!r}")
        for i in targets:
            out[i][bare] = value
    return out


def defaults(cls) -> dict[str, Any]:
    return {f.name: f.default for f in dataclasses.fields(cls)}
