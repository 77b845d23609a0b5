#!/usr/bin/env python3

"""
Run Settings

Collects lifecycle-run configuration from, in increasing precedence:
- dataclass defaults
- a flat key-value config file (``--config``)
- ``SLIM_<FIELD>`` environment variables (a ``.env`` file is loaded first)
- command-line flags

Keys are plain field names (``tau_keep``, ``top_k``, ``regime`` ...). The
settings layer only gathers raw strings and their origin; typed conversion
happens in ``coerce_value`` against each dataclass field.
"""

import os
from dataclasses import fields
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from .phase_colors import cli_printer

ENV_PREFIX = "SLIM_"


class ConfigError(ValueError):
    """Invalid, unknown or unparsable configuration value."""


def load_settings(config_path: Optional[str] = None, env_file: Optional[str] = None,
                  known_keys: Optional[Iterable[str]] = None) -> Tuple[Dict[str, str], Dict[str, str]]:
    """
    Gather raw settings from a config file and the environment.

    Args:
        config_path: flat key-value file, read with dotenv_values
        env_file: optional .env path passed to load_dotenv
        known_keys: accepted keys; anything else raises ConfigError

    Returns:
        (values, sources) where sources maps each key to "file" or "env"
    """
    values: Dict[str, str] = {}
    sources: Dict[str, str] = {}
    known = set(known_keys) if known_keys is not None else None

    if config_path:
        if not os.path.exists(config_path):
            raise ConfigError(f"Config file not found: {config_path}")
        for key, raw in dotenv_values(config_path).items():
            key = key.strip().lower()
            if known is not None and key not in known:
                raise ConfigError(f'Unknown config key "{key}" in {config_path}')
            if raw is None:
                raise ConfigError(f'Config key "{key}" in {config_path} has no value')
            values[key] = raw.strip()
            sources[key] = "file"

    load_dotenv(env_file)
    for env_key, raw in os.environ.items():
        if not env_key.startswith(ENV_PREFIX):
            continue
        key = env_key[len(ENV_PREFIX):].lower()
        if known is not None and key not in known:
            continue
        values[key] = raw.strip()
        sources[key] = "env"

    return values, sources


def coerce_value(key: str, raw: Any, target: type) -> Any:
    """Convert a raw string to the type of a dataclass field."""
    if not isinstance(raw, str):
        return raw
    try:
        if target is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if target is int:
            return int(raw)
        if target is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f'Cannot parse "{raw}" for {key} as {target.__name__}')
    return raw


def apply_settings(config_cls, values: Mapping[str, Any], **overrides):
    """Build a dataclass instance from the subset of ``values`` naming its fields."""
    kwargs = dict(overrides)
    for f in fields(config_cls):
        if f.name in values and f.name not in kwargs:
            kwargs[f.name] = coerce_value(f.name, values[f.name], _field_type(f))
    try:
        return config_cls(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e))


def _field_type(f) -> type:
    annotation = f.type
    if isinstance(annotation, str):
        return {"int": int, "float": float, "bool": bool}.get(annotation, str)
    return annotation if annotation in (int, float, bool) else str


def check_run_environment(effective: Mapping[str, Any], sources: Mapping[str, str]):
    """
    Print the effective configuration and where overridden values came from.

    Args:
        effective: flat mapping of field name to effective value
        sources: field name to "file", "env" or "flag"
    """
    console_flag = os.getenv("SLIM_CONSOLE", "true").lower() == "true"
    if not console_flag:
        return

    cli_printer.print_info("Effective run configuration:")
    for key in sorted(effective):
        origin = sources.get(key)
        suffix = f" ({origin})" if origin else ""
        cli_printer.print(f"   {key} = {effective[key]}{suffix}")
    overridden = sorted(k for k in sources if k in effective)
    if overridden:
        cli_printer.print_success(f"{len(overridden)} value(s) overridden from defaults")
    else:
        cli_printer.print_info("All values at their defaults")
