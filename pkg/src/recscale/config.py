"""Flat ``key = value`` config files with typo suggestions."""

from __future__ import annotations

import difflib


class ConfigError(ValueError):
    pass


def parse_config(text: str, valid_keys=None, path="<config>") -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment.

    Values are returned as str; use the coercion helpers below. Unknown keys
    (when ``valid_keys`` is given) are rejected with the nearest valid key.
    """
    out = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {line_no}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{path} line {line_no}: empty key")
        if key in out:
            raise ConfigError(f"{path} line {line_no}: duplicate key {key!r}")
        if valid_keys is not None and key not in valid_keys:
            close = difflib.get_close_matches(key, list(valid_keys), n=1)
            hint = f"; did you mean {close[0]!r}?" if close else ""
            raise ConfigError(f"{path} line {line_no}: unknown key {key!r}{hint}")
        out[key] = value
    return out


def load_config(path, valid_keys=None) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), valid_keys=valid_keys, path=str(path))


def as_int(cfg: dict, key: str, default=None) -> int:
    if key not in cfg:
        return default
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"{key}: expected integer, got {cfg[key]!r}") from None


def as_float(cfg: dict, key: str, default=None) -> float:
    if key not in cfg:
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(f"{key}: expected number, got {cfg[key]!r}") from None


def as_bool(cfg: dict, key: str, default=None) -> bool:
    if key not in cfg:
        return default
    v = cfg[key].lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected boolean, got {cfg[key]!r}")


def as_str(cfg: dict, key: str, default=None, choices=None) -> str:
    v = cfg.get(key, default)
    if choices is not None and v not in choices:
        raise ConfigError(f"{key}: expected one of {sorted(choices)}, got {v!r}")
    return v
