"""Configuration loading.

Config files are flat ``key = value`` text, one pair per line, ``#``
comments and blank lines allowed. Every key matches an
:class:`~invi.pipeline.EditConfig` field. Environment variables with the
``INVI_`` prefix override file values (``INVI_STEPS_INFER=5``), and explicit
override mappings (CLI/service) take precedence over both.
"""
from __future__ import annotations

import os
from dataclasses import fields
from pathlib import Path
from typing import Mapping

from .pipeline import EditConfig

ENV_PREFIX = "INVI_"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config_file(path) -> dict[str, str]:
    mapping: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"{path}:{line_no}: empty key")
        mapping[key] = value
    return mapping


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    known = {f.name for f in fields(EditConfig)}
    out = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in known:
                out[name] = value
    return out


def _coerce(name: str, value: str, target_type: type):
    if target_type is bool:
        lowered = value.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"config key {name}: cannot parse {value!r} as bool")
    try:
        return target_type(value)
    except (TypeError, ValueError) as exc:
        raise ValueError(
            f"config key {name}: cannot parse {value!r} as {target_type.__name__}"
        ) from exc


def build_edit_config(*sources: Mapping[str, str]) -> EditConfig:
    """Merge string-valued mappings (later wins) into a validated EditConfig."""
    merged: dict[str, str] = {}
    for source in sources:
        merged.update(source)
    cfg = EditConfig()
    by_name = {f.name: f for f in fields(EditConfig)}
    for key, value in merged.items():
        field = by_name.get(key)
        if field is None:
            raise ValueError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, str(value), type(getattr(cfg, key))))
    cfg.validate()
    return cfg


def load_config(path=None, overrides: Mapping[str, str] | None = None,
                environ: Mapping[str, str] | None = None) -> EditConfig:
    """File values, then environment overrides, then explicit overrides."""
    sources: list[Mapping[str, str]] = []
    if path is not None:
        sources.append(parse_config_file(path))
    sources.append(env_overrides(environ))
    if overrides:
        sources.append({k: str(v) for k, v in overrides.items()})
    return build_edit_config(*sources)
