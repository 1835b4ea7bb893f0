"""Versioned run configuration.

The file is JSON with a top-level ``"version"`` and one object per section.
Frequencies are MHz unless given as a string with a ``THz``, ``GHz``,
``MHz`` or ``kHz`` suffix (``"2.8 GHz"``). Every key is declared in
:data:`SCHEMA` with its default, unit, origin and meaning; unknown keys are
rejected with their full path.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass
from typing import Any, Optional

CONFIG_VERSION = 1

# origin tags: "literature" = published NV-diamond / cavity estimate,
# "design" = modelling choice of this package, "derived" = arithmetic on other keys
ORIGINS = ("literature", "design", "derived")


@dataclass(frozen=True)
class Key:
    default: Any
    unit: str
    origin: str
    doc: str


SCHEMA: dict[str, dict[str, Key]] = {
    "design": {
        "length_cm": Key(30.0, "cm", "literature", "cavity length L"),
        "waist_um": Key(50.0, "um", "literature", "cavity waist D"),
        "quality": Key(2e5, "", "literature", "cavity quality factor Q"),
        "fsr_formula": Key("c/4L", "", "design", "free spectral range convention, c/4L reproduces ~250 MHz at 30 cm"),
        "t2_ms": Key(0.1, "ms", "literature", "spin coherence time used for the limiting-resource comparison"),
    },
    "noise": {
        "kappa_width": Key("1.4 kHz", "MHz", "derived", "cavity full width, 42/L kHz at L = 30 cm"),
        "gamma_excited": Key(5.0, "MHz", "literature", "excited-state decay, the NV homogeneous linewidth"),
        "t2_spin_ms": Key(0.1, "ms", "literature", "ground-spin coherence time"),
        "t1_spin_s": Key(None, "s", "design", "ground-spin population lifetime; null disables the channel"),
    },
    "frame": {
        "cavity_detuning_policy": Key("resonant", "", "design", "resonant or detuned wire cavity"),
        "cavity_detuning": Key(0.0, "MHz", "design", "cavity offset from the a-g-c legs in the detuned policy"),
    },
    "pulses": {
        "raman_omega": Key(10.0, "MHz", "design", "Rabi frequency per leg of Raman pi pulses"),
        "raman_detuning": Key(1000.0, "MHz", "design", "single-photon detuning of Raman pi pulses (100 x Rabi)"),
        "stirap_omega": Key(2.0, "MHz", "design", "peak Rabi frequency of the wire exchange pulses"),
        "stirap_duration_us": Key(50.0, "us", "design", "Blackman pulse length of the wire exchange"),
        "stirap_overlap": Key(0.5, "", "design", "fractional overlap of Stokes and pump pulses"),
    },
    "spectral": {
        "inhomogeneous_width": Key("1 THz", "MHz", "literature", "inhomogeneous linewidth (FWHM)"),
        "channel_spacing": Key("2.8 GHz", "MHz", "literature", "channel spacing at 500 G (4.6 MHz at zero field)"),
        "profile": Key("gaussian", "", "design", "inhomogeneous line shape: gaussian, lorentzian or uniform"),
        "homogeneous_linewidth": Key(5.0, "MHz", "literature", "usable window around each channel centre"),
        "dopant_density_cm3": Key(1e17, "cm^-3", "literature", "dopant concentration"),
        "volume_um3": Key(25000.0, "um^3", "literature", "probed volume at the cavity waist"),
        "pull_per_atom": Key(None, "kHz", "design", "cavity pull of one atom; no published value, must be set"),
        "measurement_noise": Key("0 kHz", "kHz", "design", "per-probe noise of a pull measurement"),
        "success_probability": Key(1.0, "", "design", "chance that one deforming shot removes one atom"),
    },
    "compiler": {
        "mode_stride": Key(11, "", "derived", "channel spacing / FSR after the commensurate length adjustment"),
    },
    "readout": {
        "efficiency": Key(1.0, "", "design", "detection efficiency"),
        "dark_count": Key(0.0, "", "design", "false-click probability"),
    },
    "simulation": {
        "cavity_dim": Key(2, "", "design", "Fock truncation (photons 0..cavity_dim-1)"),
        "tol": Key(1e-10, "", "design", "integrator tolerance"),
    },
}


class ConfigError(ValueError):
    pass


class UnknownKeyError(ConfigError):
    pass


class VersionError(ConfigError):
    pass


_UNITS = {"thz": 1e6, "ghz": 1e3, "mhz": 1.0, "khz": 1e-3, "hz": 1e-6}
_FREQ = re.compile(r"^\s*([-+0-9.eE]+)\s*([a-zA-Z]+)\s*$")


def to_unit(value: Any, unit: str) -> Any:
    """Convert a possibly suffixed frequency to ``unit`` (MHz or kHz); other values pass through."""
    if unit.lower() not in _UNITS or value is None:
        return value
    if isinstance(value, str):
        m = _FREQ.match(value)
        if not m or m.group(2).lower() not in _UNITS:
            raise ConfigError(f"cannot read frequency {value!r}")
        mhz = float(m.group(1)) * _UNITS[m.group(2).lower()]
    else:
        mhz = float(value) * _UNITS[unit.lower()]
    return mhz / _UNITS[unit.lower()]


class Config:
    """Resolved configuration: ``cfg["noise", "kappa_width"]`` returns the value in the key's unit."""

    def __init__(self, raw: Optional[dict] = None):
        self.raw = self.defaults()
        if raw is not None:
            self.merge(raw)

    @staticmethod
    def defaults() -> dict:
        return {sec: {k: copy.deepcopy(v.default) for k, v in keys.items()} for sec, keys in SCHEMA.items()}

    def merge(self, raw: dict) -> None:
        raw = dict(raw)
        version = raw.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise VersionError(f"config version {version} is not supported (expected {CONFIG_VERSION})")
        for sec, body in raw.items():
            if sec not in SCHEMA:
                raise UnknownKeyError(f"unknown config key: {sec}")
            if not isinstance(body, dict):
                raise ConfigError(f"section {sec} must be an object")
            for k, v in body.items():
                if k not in SCHEMA[sec]:
                    raise UnknownKeyError(f"unknown config key: {sec}.{k}")
                to_unit(v, SCHEMA[sec][k].unit)
                self.raw[sec][k] = v

    def set(self, path: str, value: Any) -> None:
        sec, _, key = path.partition(".")
        self.merge({sec: {key: value}})

    def __getitem__(self, item):
        sec, key = item
        return to_unit(self.raw[sec][key], SCHEMA[sec][key].unit)

    @classmethod
    def load(cls, path) -> "Config":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls(data)

    def to_dict(self) -> dict:
        return {"version": CONFIG_VERSION, **copy.deepcopy(self.raw)}


def schema_table() -> list[dict]:
    return [{"key": f"{sec}.{k}", "default": v.default, "unit": v.unit, "origin": v.origin, "doc": v.doc}
            for sec, keys in SCHEMA.items() for k, v in keys.items()]
