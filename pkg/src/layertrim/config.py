"""Flat ``key = value`` configuration files with [section] headers.

The same format serves run configs, run manifests, and checkpoint
manifests, so every artifact is diff-able text. Parsing is strict: unknown
keys and malformed values are collected and reported together.
"""

from __future__ import annotations

import configparser
from io import StringIO


class ConfigError(Exception):
    """Carries every violated constraint found during validation."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


def read_sections(path: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError([f"config not readable: {path}: {exc}"]) from exc
    except configparser.Error as exc:
        raise ConfigError([f"config not parseable: {path}: {exc}"]) from exc
    return {section: dict(parser.items(section)) for section in parser.sections()}


def render_sections(sections: dict[str, dict[str, str]]) -> str:
    out = StringIO()
    for i, (section, items) in enumerate(sections.items()):
        if i:
            out.write("\n")
        out.write(f"[{section}]\n")
        for key, value in items.items():
            out.write(f"{key} = {value}\n")
    return out.getvalue()


def write_sections(path: str, sections: dict[str, dict[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_sections(sections))


class SectionReader:
    """Typed access to one section, accumulating violations instead of
    failing on the first bad key."""

    def __init__(self, sections: dict[str, dict[str, str]], name: str, violations: list[str]):
        self.name = name
        self.items = dict(sections.get(name, {}))
        self.violations = violations

    def _fetch(self, key: str, default, caster, kind: str):
        raw = self.items.pop(key, None)
        if raw is None:
            if default is _REQUIRED:
                self.violations.append(f"{self.name}.{key} is required")
                return None
            return default
        try:
            return caster(raw)
        except ValueError:
            self.violations.append(f"{self.name}.{key} must be {kind}, got {raw!r}")
            return None

    def get_int(self, key: str, default=None):
        return self._fetch(key, default, lambda s: int(s.replace("_", "")), "an integer")

    def get_float(self, key: str, default=None):
        return self._fetch(key, default, float, "a number")

    def get_str(self, key: str, default=None):
        return self._fetch(key, default, str, "a string")

    def get_bool(self, key: str, default=None):
        def cast(s: str) -> bool:
            low = s.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(s)

        return self._fetch(key, default, cast, "a boolean")

    def reject_unknown(self) -> None:
        for key in self.items:
            self.violations.append(f"{self.name}.{key} is not a recognized key")


_REQUIRED = object()
REQUIRED = _REQUIRED
