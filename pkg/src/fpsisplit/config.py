"""TOML run configuration: loading, ``key=value`` overrides and echo."""

from __future__ import annotations

import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Any

from .biot_fluid import PhysicalParams
from .driver import InitialData, RunConfig
from .geometry import Thresholds

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    pass


_RUN_KEYS = ("dt", "T", "delta", "n_refine", "M", "K", "solver_tol")
SECTIONS: dict[str, dict[str, type]] = {
    "run": {"dt": float, "T": float, "delta": float, "n_refine": int, "M": int, "K": int, "solver_tol": float},
    "physics": {f.name: float for f in fields(PhysicalParams)},
    "thresholds": {f.name: float for f in fields(Thresholds)},
    "initial": {f.name: float for f in fields(InitialData)},
    "sweep": {"h": list, "dt_levels": int, "delta": list},
}
DEFAULT_SWEEP = {"h": [1.0, 0.5, 0.25, 0.125, 0.0625], "dt_levels": 4, "delta": [0.4, 0.2, 0.1]}


def _coerce(section: str, key: str, value: Any) -> Any:
    try:
        kind = SECTIONS[section][key]
    except KeyError:
        raise ConfigError(f"unknown key {section}.{key}") from None
    if kind is list:
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{section}.{key} must be a list of numbers")
        return [float(v) for v in value]
    if isinstance(value, bool):
        raise ConfigError(f"{section}.{key} must be a number")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{section}.{key} must be an integer, got {value}")
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key} must be an integer")
        return int(value)
    if not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number")
    return float(value)


def normalize(raw: dict[str, Any]) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {s: {} for s in SECTIONS}
    for section, table in raw.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(table, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in table.items():
            out[section][key] = _coerce(section, key, value)
    return out


def load_config(path: str | Path) -> dict[str, dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return normalize(raw)


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        raise ConfigError(f"malformed value {text!r}") from None


def apply_override(cfg: dict[str, dict[str, Any]], assignment: str) -> None:
    """Apply ``key=value`` or ``section.key=value``; bare keys must be unique."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, text = (s.strip() for s in assignment.split("=", 1))
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section in override {key!r}")
    else:
        owners = [s for s, keys in SECTIONS.items() if key in keys]
        if not owners:
            raise ConfigError(f"unknown key {key!r}")
        if len(owners) > 1:
            raise ConfigError(f"ambiguous key {key!r}; use one of " + ", ".join(f"{s}.{key}" for s in owners))
        section, name = owners[0], key
    cfg[section][name] = _coerce(section, name, _parse_value(text))


def to_run_config(cfg: dict[str, dict[str, Any]]) -> RunConfig:
    rc = RunConfig(
        params=replace(PhysicalParams(), **cfg["physics"]),
        thresholds=replace(Thresholds(), **cfg["thresholds"]),
        initial=replace(InitialData(), **cfg["initial"]),
    )
    rc = replace(rc, **cfg["run"])
    try:
        rc.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return rc


def sweep_settings(cfg: dict[str, dict[str, Any]]) -> dict[str, Any]:
    return {**DEFAULT_SWEEP, **cfg["sweep"]}


def effective_config(cfg: dict[str, dict[str, Any]]) -> dict[str, dict[str, Any]]:
    """Every key with its effective value (defaults filled in)."""
    rc = to_run_config(cfg)
    return {
        "run": {k: getattr(rc, k) for k in _RUN_KEYS},
        "physics": {f.name: getattr(rc.params, f.name) for f in fields(PhysicalParams)},
        "thresholds": {f.name: getattr(rc.thresholds, f.name) for f in fields(Thresholds)},
        "initial": {f.name: getattr(rc.initial, f.name) for f in fields(InitialData)},
        "sweep": sweep_settings(cfg),
    }


def _fmt(v: Any) -> str:
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: dict[str, dict[str, Any]]) -> str:
    """TOML text of a normalized config; floats keep full precision."""
    lines = []
    for section, table in cfg.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {_fmt(v)}" for k, v in table.items())
        lines.append("")
    return "\n".join(lines)
