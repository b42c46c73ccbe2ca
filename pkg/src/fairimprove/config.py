"""TOML configuration files and run manifests."""

import sys
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError


def read_toml(path):
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dumps_toml(mapping):
    return tomli_w.dumps(mapping)


def write_toml(mapping, path):
    Path(path).write_text(dumps_toml(mapping), encoding="utf-8")


def merge(base, override):
    """Recursive dict merge; values in ``override`` win, ``None`` values are skipped."""
    out = dict(base)
    for key, value in override.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out
