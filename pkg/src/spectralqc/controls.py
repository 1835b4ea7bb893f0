"""Control-event records shared by the dynamics, pulse and compiler layers.

All frequencies are in MHz (cyclic) and all times in microseconds; angular
factors are applied only inside :mod:`spectralqc.dynamics`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hilbert import EXCITED_LEVELS, GROUND_LEVELS

ENVELOPE_SHAPES = ("rect", "gaussian", "blackman")

# edge value of the truncated gaussian relative to its peak
GAUSSIAN_EDGE = 1e-5


@dataclass(frozen=True)
class Envelope:
    """Pulse envelope of unit peak, non-zero on ``[center - duration/2, center + duration/2]``."""

    shape: str
    duration: float
    center: float

    def __post_init__(self):
        if self.shape not in ENVELOPE_SHAPES:
            raise ValueError(f"unknown envelope shape {self.shape!r}")
        if not self.duration > 0:
            raise ValueError("envelope duration must be positive")

    @classmethod
    def starting_at(cls, shape: str, duration: float, start: float = 0.0) -> "Envelope":
        return cls(shape, float(duration), float(start) + duration / 2)

    @property
    def start(self) -> float:
        return self.center - self.duration / 2

    @property
    def end(self) -> float:
        return self.center + self.duration / 2

    def shifted(self, dt: float) -> "Envelope":
        return Envelope(self.shape, self.duration, self.center + dt)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.start) & (t <= self.end)
        if self.shape == "rect":
            val = np.ones_like(t)
        elif self.shape == "gaussian":
            sigma = self.duration / (2 * np.sqrt(-2 * np.log(GAUSSIAN_EDGE)))
            val = np.exp(-((t - self.center) ** 2) / (2 * sigma**2))
        else:
            u = (t - self.start) / self.duration
            val = 0.42 - 0.5 * np.cos(2 * np.pi * u) + 0.08 * np.cos(4 * np.pi * u)
            val = np.clip(val, 0.0, None)
        out = np.where(inside, val, 0.0)
        return float(out) if out.ndim == 0 else out

    def area(self) -> float:
        """Time integral of the envelope (us)."""
        if self.shape == "rect":
            return self.duration
        if self.shape == "blackman":
            return 0.42 * self.duration
        ts = np.linspace(self.start, self.end, 4001)
        return float(np.trapz(self(ts), ts))


def _as_tuple(value, n: int, name: str) -> tuple:
    if np.ndim(value) == 0:
        return (float(value),) * n
    out = tuple(float(v) for v in value)
    if len(out) != n:
        raise ValueError(f"{name} needs one entry per leg ({n}), got {len(out)}")
    return out


def _check_legs(legs) -> tuple:
    legs = tuple((str(gr), str(ex)) for gr, ex in legs)
    if not legs:
        raise ValueError("at least one leg required")
    for gr, ex in legs:
        if gr not in GROUND_LEVELS or ex not in EXCITED_LEVELS:
            raise ValueError(f"leg ({gr}, {ex}) must join a ground level to an excited level")
    return legs


@dataclass(frozen=True)
class PulseSpec:
    """One laser event on one atom: one tone per (ground, excited) leg.

    ``detuning`` is the single-photon detuning of each tone, transition minus
    drive frequency. A tone contributes ``(omega/2) exp(i phase) |excited><ground| + h.c.``.
    """

    atom: int
    legs: tuple
    omega_peak: tuple
    envelope: Envelope
    detuning: tuple = 0.0
    phase: float = 0.0

    def __post_init__(self):
        legs = _check_legs(self.legs)
        object.__setattr__(self, "legs", legs)
        object.__setattr__(self, "omega_peak", _as_tuple(self.omega_peak, len(legs), "omega_peak"))
        object.__setattr__(self, "detuning", _as_tuple(self.detuning, len(legs), "detuning"))
        object.__setattr__(self, "phase", float(self.phase))
        object.__setattr__(self, "atom", int(self.atom))
        if any(w < 0 for w in self.omega_peak):
            raise ValueError("omega_peak must be non-negative")

    def shifted(self, dt: float) -> "PulseSpec":
        return PulseSpec(self.atom, self.legs, self.omega_peak, self.envelope.shifted(dt), self.detuning, self.phase)

    def on_atom(self, atom: int) -> "PulseSpec":
        return PulseSpec(atom, self.legs, self.omega_peak, self.envelope, self.detuning, self.phase)

    def to_dict(self) -> dict:
        return {
            "atom": self.atom,
            "legs": [list(leg) for leg in self.legs],
            "omega_peak_mhz": list(self.omega_peak),
            "detuning_mhz": list(self.detuning),
            "phase_rad": self.phase,
            "envelope": {"shape": self.envelope.shape, "duration_us": self.envelope.duration,
                         "center_us": self.envelope.center},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PulseSpec":
        env = d["envelope"]
        return cls(
            atom=d["atom"],
            legs=tuple(tuple(leg) for leg in d["legs"]),
            omega_peak=tuple(d["omega_peak_mhz"]),
            envelope=Envelope(env["shape"], env["duration_us"], env["center_us"]),
            detuning=tuple(d["detuning_mhz"]),
            phase=d["phase_rad"],
        )


@dataclass(frozen=True)
class CavityCoupling:
    """Vacuum coupling ``g`` (MHz) of one atom's legs to the cavity mode.

    Each leg contributes ``(g/2) (a |excited><ground| + h.c.)``; ``detuning``
    is the cavity detuning from that leg (transition minus cavity frequency).
    """

    atom: int
    g: float
    legs: tuple
    detuning: tuple = 0.0

    def __post_init__(self):
        legs = _check_legs(self.legs)
        object.__setattr__(self, "legs", legs)
        object.__setattr__(self, "detuning", _as_tuple(self.detuning, len(legs), "detuning"))
        object.__setattr__(self, "atom", int(self.atom))
        if self.g < 0:
            raise ValueError("cavity coupling must be non-negative")


def window(pulses: Sequence[PulseSpec]) -> tuple[float, float]:
    """Earliest start and latest end over a set of pulses."""
    return min(p.envelope.start for p in pulses), max(p.envelope.end for p in pulses)
