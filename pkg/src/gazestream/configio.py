"""Reading and writing of the human-readable key-value config files.

The format is deliberately tiny: one ``key = value`` pair per line,
``#`` starts a comment, blank lines are ignored.  Values are parsed as
int, then float, then a comma-separated list of floats, then left as a
string.  This covers retina/display parameter files and network profile
files without pulling in a config framework.
"""

from __future__ import annotations

import json
import os

from .errors import ConfigError


def parse_value(text: str):
    """Parse a single config value: int, float, float list, or string."""
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if "," in text:
        parts = [p.strip() for p in text.split(",")]
        try:
            return tuple(float(p) for p in parts if p)
        except ValueError:
            pass
    return text


def read_config(path: str) -> dict:
    """Read a key-value config file into a dict.

    Raises ConfigError on unreadable files or lines that are not
    ``key = value`` pairs.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            out[key] = parse_value(value)
    return out


def write_config(path: str, values: dict, header: str | None = None) -> None:
    """Write a dict as a key-value config file (deterministic key order)."""
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for key in sorted(values):
            value = values[key]
            if isinstance(value, (tuple, list)):
                value = ", ".join(repr(v) for v in value)
            fh.write(f"{key} = {value}\n")


def write_json(path: str, payload: dict) -> None:
    """Write JSON with sorted keys and stable float formatting.

    repr-based float serialization round-trips exactly, which keeps
    rerun outputs byte-identical.
    """
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str) -> dict:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
