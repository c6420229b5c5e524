"""Flat ``key=value`` run configuration.

Keys carry their unit as a suffix (``tau_s``, ``freq_hz``, ``bx_gauss``).  A
value may repeat the unit after the number (``tau_s = 0.2 s``); any other
unit is an error, as is a known key spelled with a different unit suffix.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

__all__ = ["ConfigError", "UnitError", "Key", "parse_config", "render_header"]


class ConfigError(ValueError):
    pass


class UnitError(ConfigError):
    pass


_UNIT_SUFFIXES = ("s", "ms", "us", "ns", "hz", "khz", "mhz", "rad_s", "rad", "gauss", "mg", "ug",
                  "s2", "w", "m", "um")


@dataclass(frozen=True)
class Key:
    kind: str             # int, float, str, bool, floats, ints, path
    default: object = None
    unit: str = ""
    help: str = ""


def _unit_of(name: str) -> tuple[str, str]:
    for u in sorted(_UNIT_SUFFIXES, key=len, reverse=True):
        if name.endswith("_" + u):
            return name[: -len(u) - 1], u
    return name, ""


def _convert(kind, raw, name, lineno):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == "ints":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        where = f"line {lineno}: " if lineno else ""
        raise ConfigError(f"{where}{name}: cannot read {raw!r} as {kind}") from None


def parse_config(text: str, schema: dict[str, Key], overrides: dict | None = None) -> dict:
    """Parse ``text`` against ``schema``; returns every key resolved to a value."""
    known = {}
    for name in schema:
        stem, unit = _unit_of(name)
        known.setdefault(stem, []).append((name, unit))
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"line {lineno}: expected key=value, got {s!r}")
        name, raw = (part.strip() for part in s.split("=", 1))
        if name not in schema:
            stem, unit = _unit_of(name)
            if unit and stem in known:
                expected = ", ".join(n for n, _ in known[stem])
                raise UnitError(f"line {lineno}: {name}: unit '{unit}' not accepted; use {expected}")
            raise ConfigError(f"line {lineno}: unknown key {name!r}")
        key = schema[name]
        m = re.fullmatch(r"(.*?)\s+([A-Za-z][A-Za-z_/^0-9]*)", raw)
        if m and key.kind in ("float", "floats", "int", "ints"):
            given = m.group(2).lower().replace("/", "_")
            if given != key.unit:
                raise UnitError(f"line {lineno}: {name}: value given in '{m.group(2)}', "
                                f"expected '{key.unit or 'dimensionless'}'")
            raw = m.group(1)
        if name in values:
            raise ConfigError(f"line {lineno}: duplicate key {name!r}")
        values[name] = _convert(key.kind, raw, name, lineno)
    for name, v in (overrides or {}).items():
        if v is not None:
            values[name] = v
    out = {}
    for name, key in schema.items():
        out[name] = values.get(name, key.default)
    return out


def render_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(render_value(x) for x in v)
    if v is None:
        return ""
    return str(v)


def render_header(command: str, cfg: dict, version: str) -> list[str]:
    lines = [f"ddlab {command} version={version}"]
    lines += [f"{k}={render_value(cfg[k])}" for k in sorted(cfg)]
    return lines


def read_config_file(path) -> str:
    return Path(path).read_text() if path else ""
