"""Flat declarative config files: `key = value` lines, arrays in brackets.

Used for dataset configs and sweep gridspecs. Values parse to int, float,
bool, or string; `[a, b, c]` parses to a list. `#` starts a comment.
Key order is preserved (it fixes grid-axis expansion order).
"""

from __future__ import annotations

from .errors import ConfigError


def parse_scalar(text: str):
    text = text.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


def parse_value(text: str):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        return [parse_scalar(p) for p in inner.split(",")] if inner else []
    return parse_scalar(text)


def parse_config_text(text: str, source="<config>") -> dict:
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}: line {lineno}: empty key")
        cfg[key] = parse_value(value)
    return cfg


def parse_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            return parse_config_text(f.read(), source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply `key=value` strings; keys must already exist in the config."""
    out = dict(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in out:
            raise ConfigError(f"override references undeclared key {key!r}")
        out[key] = parse_value(value)
    return out


def format_value(value) -> str:
    if isinstance(value, list):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: dict) -> str:
    return "\n".join(f"{k} = {format_value(v)}" for k, v in cfg.items()) + "\n"
