"""Line-oriented ``key = value`` files with ``[section]`` headers.

Blank lines and ``#`` comments are ignored.  Every error carries the
offending line number.
"""

from __future__ import annotations

from dataclasses import dataclass


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class Entry:
    value: str
    line: int


def parse_sections(text: str, allowed: dict[str, set[str]] | None = None) -> dict[str, dict[str, Entry]]:
    """Split ``text`` into {section: {key: Entry}}.

    If ``allowed`` is given, unknown sections and keys raise ConfigError.
    """
    out: dict[str, dict[str, Entry]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if allowed is not None and section not in allowed:
                raise ConfigError(f"unknown section [{section}]", lineno)
            if section in out:
                raise ConfigError(f"duplicate section [{section}]", lineno)
            out[section] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any section", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno)
        if allowed is not None and key not in allowed[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if key in out[section]:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        out[section][key] = Entry(value, lineno)
    return out


def as_float(entry: Entry, key: str) -> float:
    try:
        return float(entry.value)
    except ValueError:
        raise ConfigError(f"{key} = {entry.value!r} is not a number", entry.line) from None


def as_int(entry: Entry, key: str) -> int:
    try:
        return int(entry.value)
    except ValueError:
        raise ConfigError(f"{key} = {entry.value!r} is not an integer", entry.line) from None
