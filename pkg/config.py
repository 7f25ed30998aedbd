#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Flat key/value config files for a simulation run.

    # comment
    g_max_hz = 2.5e6
    tau_pump_ns = 2000
    emission_mode = single

Ordinary frequencies (omega/2pi) carry `_hz`, integer durations `_ns`, all
other quantities are SI. Keys that are not given keep their defaults.
"""

import logging

from cavity_dynamics import TWO_PI, CavityQedParams
from errors import ConfigError, ValidationError
from source_sim import AtomFluxConfig, ConfigBundle, DetectorModel, PulseSchedule

logger = logging.getLogger(__name__)

# key -> (section, field, parse, file value -> internal, internal -> file value)
_ANGULAR = (lambda v: TWO_PI * v, lambda v: v / TWO_PI)
_PLAIN = (lambda v: v, lambda v: v)

CONFIG_KEYS = {
    "g_max_hz":        ("cavity", "g_max", float, *_ANGULAR),
    "kappa_hz":        ("cavity", "kappa", float, *_ANGULAR),
    "gamma_perp_hz":   ("cavity", "gamma_perp", float, *_ANGULAR),
    "delta_hz":        ("cavity", "delta", float, *_ANGULAR),
    "omega_max_hz":    ("cavity", "omega_max", float, *_ANGULAR),
    "escape_fraction": ("cavity", "escape_fraction", float, *_PLAIN),
    "tau_pump_ns":     ("schedule", "tau_pump_ns", int, *_PLAIN),
    "tau_recycle_ns":  ("schedule", "tau_recycle_ns", int, *_PLAIN),
    "pulses_per_cycle": ("schedule", "pulses_per_cycle", int, *_PLAIN),
    "rate_lambda":     ("flux", "rate_lambda", float, *_PLAIN),
    "velocity":        ("flux", "velocity", float, *_PLAIN),
    "waist":           ("flux", "waist", float, *_PLAIN),
    "recycle_success": ("flux", "recycle_success", float, *_PLAIN),
    "qe":              ("detector", "qe", float, *_PLAIN),
    "path_efficiency": ("detector", "path_efficiency", float, *_PLAIN),
    "splitter_ratio":  ("detector", "splitter_ratio", float, *_PLAIN),
    "dark_rate_hz":    ("detector", "dark_rate", float, *_PLAIN),
    "emission_mode":   ("bundle", "emission_mode", str, *_PLAIN),
}


def _parse_int(raw: str) -> int:
    value = float(raw)
    if value != int(value):
        raise ValueError(f"'{raw}' is not an integer")
    return int(value)


def parse_config(text: str, source: str = "<string>") -> ConfigBundle:
    """Build a ConfigBundle from config text; unknown or bad keys raise ConfigError."""
    sections = {"cavity": {}, "schedule": {}, "flux": {}, "detector": {}, "bundle": {}}
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"{source}:{line_number}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(key, f"{source}:{line_number}: unknown key")
        section, name, parse, to_internal, _ = CONFIG_KEYS[key]
        try:
            value = _parse_int(raw) if parse is int else parse(raw)
        except ValueError:
            raise ConfigError(key, f"{source}:{line_number}: cannot parse '{raw}'")
        sections[section][name] = to_internal(value)

    schedule_fields = sections["schedule"]
    cavity_fields = sections["cavity"]
    if "tau_pump_ns" in schedule_fields:
        cavity_fields["tau_pump"] = schedule_fields["tau_pump_ns"] * 1e-9

    try:
        return ConfigBundle(
            cavity=CavityQedParams(**cavity_fields),
            schedule=PulseSchedule(**schedule_fields),
            flux=AtomFluxConfig(**sections["flux"]),
            detector=DetectorModel(**sections["detector"]),
            **sections["bundle"],
        )
    except ValidationError as e:
        # name the first offending key we can recognise in the message
        for key, (_, name, *_rest) in CONFIG_KEYS.items():
            if name in str(e):
                raise ConfigError(key, str(e)) from e
        raise


def load_config(path: str) -> ConfigBundle:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ValidationError(f"cannot read config file {path}: {e}") from e
    bundle = parse_config(text, source=path)
    logger.info(f"Loaded config {path}")
    return bundle


def dump_config(bundle: ConfigBundle) -> str:
    """Render a bundle in the config file format; parse_config reads it back."""
    lines = ["# cqed simulation config"]
    for key, (section, name, parse, _, to_file) in CONFIG_KEYS.items():
        owner = bundle if section == "bundle" else getattr(bundle, section)
        value = to_file(getattr(owner, name))
        if parse is float:
            value = repr(float(value))
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"

